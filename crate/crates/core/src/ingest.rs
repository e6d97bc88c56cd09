//! Player-tracking ingestion: parsing, possession building, court
//! normalization and the analysis matrices (movement, speed/angle and shot
//! charts) with their categorical labels.
//!
//! Courts are 94 x 50 ft. Every play is normalized so that the offense
//! attacks the `x > 47` half, where the basket sits at [`HOOP`].

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const COURT_LENGTH: f64 = 94.0;
pub const COURT_WIDTH: f64 = 50.0;
pub const HALF_COURT: f64 = 47.0;
/// Basket center after normalization.
pub const HOOP: (f64, f64) = (88.75, 25.0);
pub const PLAYERS_PER_TEAM: usize = 5;
/// Largest run of missing raw frames that is filled by interpolation.
pub const MAX_INTERPOLATED_GAP: i64 = 2;
/// Fraction of frames that may be dropped before parsing fails.
pub const MAX_DROPPED_FRACTION: f64 = 0.05;

pub const TRACKING_HEADER: [&str; 10] = [
    "game_id",
    "event_id",
    "frame",
    "timestamp",
    "entity_type",
    "team",
    "player_id",
    "x",
    "y",
    "z",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlayerPosition {
    pub team: String,
    pub player_id: String,
    pub x: f64,
    pub y: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BallPosition {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

/// One instant of a play. Players are kept in canonical (team, player id)
/// order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrackingFrame {
    pub game_id: String,
    pub event_id: String,
    pub frame_index: i64,
    pub timestamp: f64,
    pub players: Vec<PlayerPosition>,
    pub ball: BallPosition,
}

/// Orders ids numerically when both are integers, otherwise as text.
fn compare_ids(a: &str, b: &str) -> Ordering {
    match (a.parse::<u64>(), b.parse::<u64>()) {
        (Ok(x), Ok(y)) => x.cmp(&y),
        _ => a.cmp(b),
    }
}

fn canonical_order(a: &PlayerPosition, b: &PlayerPosition) -> Ordering {
    a.team.cmp(&b.team).then_with(|| compare_ids(&a.player_id, &b.player_id))
}

impl TrackingFrame {
    pub fn teams(&self) -> Vec<&str> {
        let mut teams: Vec<&str> = self.players.iter().map(|p| p.team.as_str()).collect();
        teams.dedup();
        teams
    }

    fn roster(&self) -> Vec<(&str, &str)> {
        self.players.iter().map(|p| (p.team.as_str(), p.player_id.as_str())).collect()
    }

    fn reflect(&mut self) {
        for p in &mut self.players {
            p.x = COURT_LENGTH - p.x;
            p.y = COURT_WIDTH - p.y;
        }
        self.ball.x = COURT_LENGTH - self.ball.x;
        self.ball.y = COURT_WIDTH - self.ball.y;
    }
}

/// Frames that passed validation, plus what was dropped and why.
#[derive(Clone, Debug, Default)]
pub struct ParsedTracking {
    pub frames: Vec<TrackingFrame>,
    pub warnings: Vec<String>,
    pub total_frames: usize,
    pub dropped_frames: usize,
}

struct FrameRows {
    line: u64,
    timestamp: f64,
    players: Vec<PlayerPosition>,
    balls: Vec<BallPosition>,
    problem: Option<String>,
}

fn field(rec: &csv::StringRecord, idx: usize) -> &str {
    rec.get(idx).unwrap_or("").trim()
}

fn number(rec: &csv::StringRecord, idx: usize, name: &str, line: u64) -> Result<f64> {
    let raw = field(rec, idx);
    let v: f64 = raw.parse().map_err(|_| Error::Parse {
        line,
        msg: format!("{name} {raw:?} is not a number"),
    })?;
    if !v.is_finite() {
        return Err(Error::Parse {
            line,
            msg: format!("{name} is not finite"),
        });
    }
    Ok(v)
}

fn in_court(x: f64, y: f64) -> bool {
    (0.0..=COURT_LENGTH).contains(&x) && (0.0..=COURT_WIDTH).contains(&y)
}

/// Parses the tracking CSV.
///
/// Rows that cannot be read at all are a hard [`Error::Parse`] carrying the
/// line number. Frames that do not hold exactly ten players (five per team)
/// and one ball inside the court are dropped with a warning; dropping more
/// than 5% of all frames is an error.
pub fn parse_tracking_csv<R: Read>(reader: R) -> Result<ParsedTracking> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| -> Result<usize> {
        headers.iter().position(|h| h.trim() == name).ok_or(Error::Parse {
            line: 1,
            msg: format!("missing column {name:?}"),
        })
    };
    let idx: Vec<usize> = TRACKING_HEADER.iter().map(|n| col(n)).collect::<Result<_>>()?;
    let [game, event, frame, ts, kind, team, pid, x, y, z] = idx[..] else {
        unreachable!()
    };

    let mut group_order: Vec<(String, String)> = Vec::new();
    let mut groups: HashMap<(String, String), BTreeMap<i64, FrameRows>> = HashMap::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.iter().all(|f| f.trim().is_empty()) {
            continue;
        }
        let key = (field(&rec, game).to_string(), field(&rec, event).to_string());
        if key.0.is_empty() || key.1.is_empty() {
            return Err(Error::Parse {
                line,
                msg: "empty game_id or event_id".into(),
            });
        }
        let frame_index: i64 = field(&rec, frame).parse().map_err(|_| Error::Parse {
            line,
            msg: format!("frame {:?} is not an integer", field(&rec, frame)),
        })?;
        let timestamp = number(&rec, ts, "timestamp", line)?;
        let xv = number(&rec, x, "x", line)?;
        let yv = number(&rec, y, "y", line)?;
        if !groups.contains_key(&key) {
            group_order.push(key.clone());
        }
        let acc = groups.entry(key).or_default().entry(frame_index).or_insert(FrameRows {
            line,
            timestamp,
            players: Vec::new(),
            balls: Vec::new(),
            problem: None,
        });
        if acc.timestamp != timestamp && acc.problem.is_none() {
            acc.problem = Some(format!("line {line}: timestamp disagrees within the frame"));
        }
        match field(&rec, kind).to_ascii_lowercase().as_str() {
            "player" => {
                let p = PlayerPosition {
                    team: field(&rec, team).to_string(),
                    player_id: field(&rec, pid).to_string(),
                    x: xv,
                    y: yv,
                };
                if p.team.is_empty() || p.player_id.is_empty() {
                    return Err(Error::Parse {
                        line,
                        msg: "player row without team or player_id".into(),
                    });
                }
                if !in_court(xv, yv) && acc.problem.is_none() {
                    acc.problem = Some(format!("line {line}: player outside the court"));
                }
                acc.players.push(p);
            }
            "ball" => {
                let zv = number(&rec, z, "z", line)?;
                if (!in_court(xv, yv) || zv < 0.0) && acc.problem.is_none() {
                    acc.problem = Some(format!("line {line}: ball outside the court"));
                }
                acc.balls.push(BallPosition { x: xv, y: yv, z: zv });
            }
            other => {
                return Err(Error::Parse {
                    line,
                    msg: format!("entity_type {other:?} is neither player nor ball"),
                })
            }
        }
    }

    let mut out = ParsedTracking::default();
    for key in group_order {
        let frames = groups.remove(&key).unwrap_or_default();
        for (frame_index, mut acc) in frames {
            out.total_frames += 1;
            acc.players.sort_by(canonical_order);
            let problem = acc.problem.take().or_else(|| frame_problem(&acc));
            if let Some(why) = problem {
                let msg = format!(
                    "game {} event {} frame {frame_index} (line {}) dropped: {why}",
                    key.0, key.1, acc.line
                );
                log::warn!("{msg}");
                out.warnings.push(msg);
                out.dropped_frames += 1;
                continue;
            }
            out.frames.push(TrackingFrame {
                game_id: key.0.clone(),
                event_id: key.1.clone(),
                frame_index,
                timestamp: acc.timestamp,
                players: acc.players,
                ball: acc.balls[0],
            });
        }
    }
    if out.total_frames > 0 && out.dropped_frames as f64 > MAX_DROPPED_FRACTION * out.total_frames as f64 {
        return Err(Error::Ingest(format!(
            "{} of {} frames were dropped (limit 5%)",
            out.dropped_frames, out.total_frames
        )));
    }
    Ok(out)
}

fn frame_problem(acc: &FrameRows) -> Option<String> {
    if acc.balls.len() != 1 {
        return Some(format!("{} ball rows", acc.balls.len()));
    }
    if acc.players.len() != 2 * PLAYERS_PER_TEAM {
        return Some(format!("{} players", acc.players.len()));
    }
    let mut seen = HashSet::new();
    for p in &acc.players {
        if !seen.insert((&p.team, &p.player_id)) {
            return Some(format!("player {} of {} appears twice", p.player_id, p.team));
        }
    }
    let mut per_team: BTreeMap<&str, usize> = BTreeMap::new();
    for p in &acc.players {
        *per_team.entry(p.team.as_str()).or_default() += 1;
    }
    if per_team.len() != 2 || per_team.values().any(|&c| c != PLAYERS_PER_TEAM) {
        return Some("teams are not five against five".into());
    }
    None
}

/// Writes frames in the tracking schema: the ten players, then the ball.
pub fn write_tracking_csv<W: Write>(writer: W, frames: &[TrackingFrame]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(TRACKING_HEADER)?;
    for f in frames {
        let frame = f.frame_index.to_string();
        let ts = f.timestamp.to_string();
        for p in &f.players {
            w.write_record([
                f.game_id.as_str(),
                &f.event_id,
                &frame,
                &ts,
                "player",
                &p.team,
                &p.player_id,
                &p.x.to_string(),
                &p.y.to_string(),
                "",
            ])?;
        }
        w.write_record([
            f.game_id.as_str(),
            &f.event_id,
            &frame,
            &ts,
            "ball",
            "",
            "",
            &f.ball.x.to_string(),
            &f.ball.y.to_string(),
            &f.ball.z.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Outcome {
    ShotMade,
    ShotMissed,
    Other,
}

impl Outcome {
    pub fn is_shot(self) -> bool {
        matches!(self, Outcome::ShotMade | Outcome::ShotMissed)
    }
}

impl std::str::FromStr for Outcome {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let norm: String = s.chars().filter(|c| c.is_ascii_alphanumeric()).collect::<String>().to_ascii_lowercase();
        match norm.as_str() {
            "shotmade" | "made" | "make" => Ok(Outcome::ShotMade),
            "shotmissed" | "missed" | "miss" => Ok(Outcome::ShotMissed),
            "other" | "" => Ok(Outcome::Other),
            _ => Err(Error::Ingest(format!("unknown outcome {s:?}"))),
        }
    }
}

/// One play-by-play row. Scores are the totals after the event.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PbpRow {
    pub game_id: Option<String>,
    pub event_id: String,
    pub outcome: Outcome,
    pub shooter_id: Option<String>,
    pub score_home: i64,
    pub score_away: i64,
    pub offense_team: Option<String>,
    pub home_team: Option<String>,
}

/// Reads the play-by-play CSV. Required columns: `event_id, outcome,
/// shooter_id, score_home, score_away`; `game_id`, `offense_team` and
/// `home_team` are optional.
pub fn read_pbp_csv<R: Read>(reader: R) -> Result<Vec<PbpRow>> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h.trim() == name);
    let need = |name: &str| {
        col(name).ok_or(Error::Parse {
            line: 1,
            msg: format!("missing column {name:?}"),
        })
    };
    let (event, outcome, shooter, home, away) = (
        need("event_id")?,
        need("outcome")?,
        need("shooter_id")?,
        need("score_home")?,
        need("score_away")?,
    );
    let (game, offense, home_team) = (col("game_id"), col("offense_team"), col("home_team"));
    let optional = |rec: &csv::StringRecord, idx: Option<usize>| {
        idx.map(|i| field(rec, i)).filter(|s| !s.is_empty()).map(str::to_string)
    };
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.iter().all(|f| f.trim().is_empty()) {
            continue;
        }
        let score = |idx: usize, name: &str| -> Result<i64> {
            field(&rec, idx).parse().map_err(|_| Error::Parse {
                line,
                msg: format!("{name} {:?} is not an integer", field(&rec, idx)),
            })
        };
        rows.push(PbpRow {
            game_id: optional(&rec, game),
            event_id: field(&rec, event).to_string(),
            outcome: field(&rec, outcome).parse().map_err(|e: Error| Error::Parse {
                line,
                msg: e.to_string(),
            })?,
            shooter_id: optional(&rec, Some(shooter)),
            score_home: score(home, "score_home")?,
            score_away: score(away, "score_away")?,
            offense_team: optional(&rec, offense),
            home_team: optional(&rec, home_team),
        });
    }
    Ok(rows)
}

/// A possession, normalized so the offense attacks the `x > 47` half.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Play {
    pub game_id: String,
    pub event_id: String,
    pub frames: Vec<TrackingFrame>,
    pub offense_team: String,
    pub defense_team: String,
    pub outcome: Outcome,
    pub shooter_id: Option<String>,
    /// Absolute score difference before the play.
    pub score_margin_at_start: i64,
    /// Team that won the game, when the home team is known.
    pub winner: Option<String>,
    /// Whether coordinates were reflected during normalization.
    pub reflected: bool,
}

impl Play {
    /// Last minus first timestamp; 0 for empty or single-frame plays.
    pub fn duration(&self) -> f64 {
        match (self.frames.first(), self.frames.last()) {
            (Some(a), Some(b)) => b.timestamp - a.timestamp,
            _ => 0.0,
        }
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn timestamps(&self) -> Vec<f64> {
        self.frames.iter().map(|f| f.timestamp).collect()
    }

    fn with_frames(&self, frames: Vec<TrackingFrame>) -> Play {
        Play {
            frames,
            ..self.clone()
        }
    }

    pub fn offense_won(&self) -> Option<bool> {
        self.winner.as_ref().map(|w| *w == self.offense_team)
    }
}

/// Plays built from one tracking file and its play-by-play.
#[derive(Clone, Debug, Default)]
pub struct PlaySet {
    pub plays: Vec<Play>,
    /// Tracking events with no play-by-play row.
    pub unmatched: Vec<String>,
    pub warnings: Vec<String>,
}

struct PbpContext {
    row: PbpRow,
    margin: i64,
    final_home: i64,
    final_away: i64,
}

/// Groups frames into plays and attaches play-by-play information.
///
/// Within an event, gaps of at most two missing raw frames are filled by
/// linear interpolation; longer gaps split the event and only the last
/// segment (the one that ends with the outcome) is kept. Events whose
/// roster changes are dropped. Fails only when no play survives.
pub fn build_plays(frames: &[TrackingFrame], pbp: &[PbpRow]) -> Result<PlaySet> {
    let mut order: Vec<(String, String)> = Vec::new();
    let mut groups: HashMap<(String, String), Vec<TrackingFrame>> = HashMap::new();
    for f in frames {
        let key = (f.game_id.clone(), f.event_id.clone());
        if !groups.contains_key(&key) {
            order.push(key.clone());
        }
        groups.entry(key).or_default().push(f.clone());
    }

    // Margins come from the row before, per game, in file order.
    let mut by_game: HashMap<Option<String>, Vec<&PbpRow>> = HashMap::new();
    for r in pbp {
        by_game.entry(r.game_id.clone()).or_default().push(r);
    }
    let mut context: HashMap<(Option<String>, String), PbpContext> = HashMap::new();
    for (game, rows) in &by_game {
        let last = rows.last().expect("nonempty group");
        let home_team = rows.iter().find_map(|r| r.home_team.clone());
        for (i, r) in rows.iter().enumerate() {
            let margin = if i == 0 {
                0
            } else {
                (rows[i - 1].score_home - rows[i - 1].score_away).abs()
            };
            let mut row = (*r).clone();
            row.home_team = row.home_team.or_else(|| home_team.clone());
            context.insert(
                (game.clone(), r.event_id.clone()),
                PbpContext {
                    row,
                    margin,
                    final_home: last.score_home,
                    final_away: last.score_away,
                },
            );
        }
    }

    let results: Vec<std::result::Result<Play, String>> = order
        .par_iter()
        .map(|key| {
            let ctx = context
                .get(&(Some(key.0.clone()), key.1.clone()))
                .or_else(|| context.get(&(None, key.1.clone())))
                .ok_or_else(|| format!("unmatched:{}", key.1))?;
            let mut frames = groups[key].clone();
            frames.sort_by_key(|f| f.frame_index);
            build_one(key, frames, ctx)
        })
        .collect();

    let mut set = PlaySet::default();
    for r in results {
        match r {
            Ok(p) => set.plays.push(p),
            Err(msg) => {
                if let Some(ev) = msg.strip_prefix("unmatched:") {
                    set.unmatched.push(ev.to_string());
                } else {
                    log::warn!("{msg}");
                    set.warnings.push(msg);
                }
            }
        }
    }
    if !set.unmatched.is_empty() {
        log::warn!("events without play-by-play: {}", set.unmatched.join(", "));
    }
    if set.plays.is_empty() {
        return Err(Error::Ingest("no valid plays".into()));
    }
    Ok(set)
}

fn build_one(
    key: &(String, String),
    frames: Vec<TrackingFrame>,
    ctx: &PbpContext,
) -> std::result::Result<Play, String> {
    let label = format!("game {} event {}", key.0, key.1);
    let mut segments: Vec<Vec<TrackingFrame>> = vec![Vec::new()];
    for f in frames {
        let seg = segments.last_mut().unwrap();
        if let Some(prev) = seg.last() {
            if f.frame_index - prev.frame_index - 1 > MAX_INTERPOLATED_GAP {
                segments.push(Vec::new());
            }
        }
        segments.last_mut().unwrap().push(f);
    }
    if segments.len() > 1 {
        log::warn!("{label}: split by a frame gap; keeping the last of {} segments", segments.len());
    }
    let segment = segments.pop().unwrap();
    let roster = segment[0].roster().into_iter().map(|(t, p)| (t.to_string(), p.to_string())).collect::<Vec<_>>();
    if segment.iter().any(|f| {
        f.roster()
            .iter()
            .zip(&roster)
            .any(|(a, b)| a.0 != b.0 || a.1 != b.1)
    }) {
        return Err(format!("{label} dropped: substitution during the play"));
    }
    let mut filled: Vec<TrackingFrame> = Vec::with_capacity(segment.len());
    for f in segment {
        if let Some(prev) = filled.last() {
            let missing = f.frame_index - prev.frame_index - 1;
            let prev = prev.clone();
            for m in 1..=missing {
                let w = m as f64 / (missing + 1) as f64;
                filled.push(interpolate(&prev, &f, w));
            }
        }
        filled.push(f);
    }

    let teams: Vec<String> = filled[0].teams().into_iter().map(str::to_string).collect();
    let row = &ctx.row;
    let offense = row
        .offense_team
        .clone()
        .filter(|t| teams.contains(t))
        .or_else(|| {
            let shooter = row.shooter_id.as_ref()?;
            filled[0].players.iter().find(|p| &p.player_id == shooter).map(|p| p.team.clone())
        })
        .unwrap_or_else(|| {
            let f = &filled[0];
            let nearest = f
                .players
                .iter()
                .min_by(|a, b| {
                    let da = (a.x - f.ball.x).hypot(a.y - f.ball.y);
                    let db = (b.x - f.ball.x).hypot(b.y - f.ball.y);
                    da.total_cmp(&db)
                })
                .expect("ten players");
            nearest.team.clone()
        });
    let defense = teams.iter().find(|t| **t != offense).cloned().unwrap_or_default();

    let reflected = filled.last().unwrap().ball.x < HALF_COURT;
    if reflected {
        filled.iter_mut().for_each(TrackingFrame::reflect);
    }

    let winner = row.home_team.as_ref().and_then(|home| {
        let away = teams.iter().find(|t| *t != home)?;
        match ctx.final_home.cmp(&ctx.final_away) {
            Ordering::Greater => Some(home.clone()),
            Ordering::Less => Some(away.clone()),
            Ordering::Equal => None,
        }
    });

    Ok(Play {
        game_id: key.0.clone(),
        event_id: key.1.clone(),
        frames: filled,
        offense_team: offense,
        defense_team: defense,
        outcome: row.outcome,
        shooter_id: row.shooter_id.clone(),
        score_margin_at_start: ctx.margin,
        winner,
        reflected,
    })
}

fn interpolate(a: &TrackingFrame, b: &TrackingFrame, w: f64) -> TrackingFrame {
    let lerp = |u: f64, v: f64| u + w * (v - u);
    TrackingFrame {
        game_id: a.game_id.clone(),
        event_id: a.event_id.clone(),
        frame_index: a.frame_index + ((b.frame_index - a.frame_index) as f64 * w).round() as i64,
        timestamp: lerp(a.timestamp, b.timestamp),
        players: a
            .players
            .iter()
            .zip(&b.players)
            .map(|(p, q)| PlayerPosition {
                team: p.team.clone(),
                player_id: p.player_id.clone(),
                x: lerp(p.x, q.x),
                y: lerp(p.y, q.y),
            })
            .collect(),
        ball: BallPosition {
            x: lerp(a.ball.x, b.ball.x),
            y: lerp(a.ball.y, b.ball.y),
            z: lerp(a.ball.z, b.ball.z),
        },
    }
}

/// Keeps frames `0, factor, 2 * factor, ...`.
pub fn downsample(play: &Play, factor: usize) -> Result<Play> {
    if factor == 0 {
        return Err(Error::config("downsampling factor must be at least 1"));
    }
    Ok(play.with_frames(play.frames.iter().step_by(factor).cloned().collect()))
}

/// Keeps the longest suffix of frames with the ball past the center line.
pub fn offensive_half_filter(play: &Play) -> Play {
    let start = play
        .frames
        .iter()
        .rposition(|f| f.ball.x <= HALF_COURT)
        .map_or(0, |i| i + 1);
    play.with_frames(play.frames[start..].to_vec())
}

/// Column names in canonical order, `team:player:x` / `team:player:y`.
pub fn player_columns(frame: &TrackingFrame, team: Option<&str>) -> Vec<String> {
    frame
        .players
        .iter()
        .filter(|p| team.is_none_or(|t| p.team == t))
        .flat_map(|p| {
            [
                format!("{}:{}:x", p.team, p.player_id),
                format!("{}:{}:y", p.team, p.player_id),
            ]
        })
        .collect()
}

fn frame_row(frame: &TrackingFrame, team: Option<&str>) -> Vec<f64> {
    frame
        .players
        .iter()
        .filter(|p| team.is_none_or(|t| p.team == t))
        .flat_map(|p| [p.x, p.y])
        .collect()
}

/// One row per frame with the ten players' (x, y), team by team.
pub fn movement_matrix(play: &Play) -> Result<Vec<Vec<f64>>> {
    if play.frames.len() < 3 {
        return Err(Error::InvalidDataset(format!(
            "play {} has {} frames; at least 3 are needed",
            play.event_id,
            play.frames.len()
        )));
    }
    Ok(play.frames.iter().map(|f| frame_row(f, None)).collect())
}

/// Per-player step length and heading between consecutive frames.
/// Headings use the two-argument arctangent; a player who does not move
/// gets heading 0.
pub fn speed_angle(play: &Play) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    if play.frames.len() < 4 {
        return Err(Error::InvalidDataset(format!(
            "play {} has {} frames; at least 4 are needed",
            play.event_id,
            play.frames.len()
        )));
    }
    let mut speed = Vec::with_capacity(play.frames.len() - 1);
    let mut angle = Vec::with_capacity(play.frames.len() - 1);
    for w in play.frames.windows(2) {
        let (s, a): (Vec<f64>, Vec<f64>) = w[0]
            .players
            .iter()
            .zip(&w[1].players)
            .map(|(p, q)| {
                let dx = q.x - p.x;
                let dy = q.y - p.y;
                let s = (dx * dx + dy * dy).sqrt();
                let a = if dx == 0.0 && dy == 0.0 { 0.0 } else { dy.atan2(dx) };
                (s, a)
            })
            .unzip();
        speed.push(s);
        angle.push(a);
    }
    Ok((speed, angle))
}

/// Frame at which the ball is released: the first frame of the run of
/// rising frames that ends at the highest point. A frame is rising when
/// its ball height exceeds the previous frame's; the first frame always
/// counts as rising.
pub fn shot_moment(play: &Play) -> Result<usize> {
    let z: Vec<f64> = play.frames.iter().map(|f| f.ball.z).collect();
    let (mut apex, mut lo) = (0, f64::INFINITY);
    for (i, &v) in z.iter().enumerate() {
        if v > z[apex] {
            apex = i;
        }
        lo = lo.min(v);
    }
    if z.is_empty() || z[apex] == lo {
        return Err(Error::FlatTrajectory);
    }
    let rising = |i: usize| i == 0 || z[i] > z[i - 1];
    let mut start = apex;
    while start > 0 && rising(start - 1) {
        start -= 1;
    }
    Ok(start)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShotClass {
    Short,
    MidRange,
    ThreePoints,
}

/// Below 6 ft is short, below 22 ft mid-range, the rest three points.
pub fn categorize_shot(delta: f64) -> Result<ShotClass> {
    if !(delta >= 0.0) {
        return Err(Error::domain(format!("shot distance must be non-negative, got {delta}")));
    }
    Ok(if delta < 6.0 {
        ShotClass::Short
    } else if delta < 22.0 {
        ShotClass::MidRange
    } else {
        ShotClass::ThreePoints
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MarginBand {
    Small,
    Medium,
    Large,
    Huge,
}

impl MarginBand {
    pub const ALL: [MarginBand; 4] = [MarginBand::Small, MarginBand::Medium, MarginBand::Large, MarginBand::Huge];
}

/// Bands 0-5, 6-10, 11-15 and 16 or more points.
pub fn categorize_margin(margin: u32) -> MarginBand {
    match margin {
        0..=5 => MarginBand::Small,
        6..=10 => MarginBand::Medium,
        11..=15 => MarginBand::Large,
        _ => MarginBand::Huge,
    }
}

pub const DURATION_CUTOFF: f64 = 12.5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DurationClass {
    Short,
    Long,
}

/// Plays lasting at most 12.5 s are short.
pub fn duration_split(play: &Play) -> DurationClass {
    if play.duration() <= DURATION_CUTOFF {
        DurationClass::Short
    } else {
        DurationClass::Long
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ChartMode {
    TwoTeam,
    SingleAttack,
    SingleDefense,
}

impl std::str::FromStr for ChartMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "two-team" => Ok(ChartMode::TwoTeam),
            "single-attack" => Ok(ChartMode::SingleAttack),
            "single-defense" => Ok(ChartMode::SingleDefense),
            other => Err(Error::config(format!(
                "unknown mode {other:?} (two-team, single-attack or single-defense)"
            ))),
        }
    }
}

/// Player locations at the release of every shot, one row per play.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShotChartSet {
    pub mode: ChartMode,
    pub team: Option<String>,
    pub columns: Vec<String>,
    #[serde(skip)]
    pub matrix: Vec<Vec<f64>>,
    pub event_ids: Vec<String>,
    /// 1 for made, 0 for missed.
    pub outcomes: Vec<u8>,
    /// Shooter's distance to the basket at release, in feet.
    pub delta: Vec<f64>,
    pub shot_class: Vec<ShotClass>,
    pub margin: Vec<i64>,
    pub margin_band: Vec<MarginBand>,
    pub offense_team: Vec<String>,
    pub offense_won: Vec<Option<bool>>,
    pub shot_frame: Vec<usize>,
}

impl ShotChartSet {
    pub fn dim(&self) -> usize {
        self.columns.len()
    }

    pub fn len(&self) -> usize {
        self.matrix.len()
    }

    pub fn is_empty(&self) -> bool {
        self.matrix.is_empty()
    }

    /// Row ids used when the matrix is written out.
    pub fn row_ids(&self) -> Vec<String> {
        self.event_ids.iter().map(|e| format!("event{e}")).collect()
    }

    /// The matrix in the dataset CSV schema (`id,x1..xD`).
    pub fn write_matrix_csv<W: Write>(&self, writer: W) -> Result<()> {
        write_matrix_csv(writer, &self.row_ids(), &self.matrix)
    }

    /// Everything except the matrix, plus `D`.
    pub fn write_sidecar_json<W: Write>(&self, writer: W) -> Result<()> {
        let mut value = serde_json::to_value(self)?;
        value["D"] = self.dim().into();
        serde_json::to_writer_pretty(writer, &value)?;
        Ok(())
    }
}

/// Writes rows in the dataset CSV schema.
pub fn write_matrix_csv<W: Write>(writer: W, ids: &[String], rows: &[Vec<f64>]) -> Result<()> {
    let dim = rows.first().map_or(0, Vec::len);
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["id".to_string()];
    header.extend((1..=dim).map(|j| format!("x{j}")));
    w.write_record(&header)?;
    for (id, row) in ids.iter().zip(rows) {
        let mut rec = vec![id.clone()];
        rec.extend(row.iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

fn shooter_distance(play: &Play, frame: &TrackingFrame) -> f64 {
    let shooter = play
        .shooter_id
        .as_ref()
        .and_then(|id| frame.players.iter().find(|p| &p.player_id == id))
        .or_else(|| {
            // Offensive player closest to the ball.
            frame.players.iter().filter(|p| p.team == play.offense_team).min_by(|a, b| {
                let da = (a.x - frame.ball.x).hypot(a.y - frame.ball.y);
                let db = (b.x - frame.ball.x).hypot(b.y - frame.ball.y);
                da.total_cmp(&db)
            })
        })
        .expect("offense has players");
    (shooter.x - HOOP.0).hypot(shooter.y - HOOP.1)
}

/// Builds shot charts from the made and missed shots in `plays`.
///
/// `TwoTeam` keeps all 20 coordinates (restricted to plays where `team`
/// attacks, when given). The single-team modes keep the 10 coordinates of
/// `team`, on the plays where it attacks or defends.
pub fn build_shot_charts(plays: &[Play], mode: ChartMode, team: Option<&str>) -> Result<ShotChartSet> {
    if mode != ChartMode::TwoTeam && team.is_none() {
        return Err(Error::config(format!("mode {mode:?} needs a team")));
    }
    if let Some(t) = team {
        if !plays.iter().any(|p| p.offense_team == t || p.defense_team == t) {
            return Err(Error::config(format!("team {t:?} does not appear in the plays")));
        }
    }
    let selected = plays.iter().filter(|p| {
        p.outcome.is_shot()
            && match (mode, team) {
                (ChartMode::TwoTeam, None) => true,
                (ChartMode::TwoTeam | ChartMode::SingleAttack, Some(t)) => p.offense_team == t,
                (ChartMode::SingleDefense, Some(t)) => p.defense_team == t,
                (_, None) => false,
            }
    });
    let column_team = match mode {
        ChartMode::TwoTeam => None,
        _ => team,
    };
    let mut set = ShotChartSet {
        mode,
        team: team.map(str::to_string),
        columns: Vec::new(),
        matrix: Vec::new(),
        event_ids: Vec::new(),
        outcomes: Vec::new(),
        delta: Vec::new(),
        shot_class: Vec::new(),
        margin: Vec::new(),
        margin_band: Vec::new(),
        offense_team: Vec::new(),
        offense_won: Vec::new(),
        shot_frame: Vec::new(),
    };
    for play in selected {
        let idx = match shot_moment(play) {
            Ok(i) => i,
            Err(e) => {
                log::warn!("event {} skipped: {e}", play.event_id);
                continue;
            }
        };
        let frame = &play.frames[idx];
        if set.columns.is_empty() {
            set.columns = player_columns(frame, column_team);
        }
        let delta = shooter_distance(play, frame);
        set.matrix.push(frame_row(frame, column_team));
        set.event_ids.push(play.event_id.clone());
        set.outcomes.push(u8::from(play.outcome == Outcome::ShotMade));
        set.delta.push(delta);
        set.shot_class.push(categorize_shot(delta)?);
        set.margin.push(play.score_margin_at_start);
        set.margin_band.push(categorize_margin(play.score_margin_at_start.unsigned_abs() as u32));
        set.offense_team.push(play.offense_team.clone());
        set.offense_won.push(play.offense_won());
        set.shot_frame.push(idx);
    }
    if set.matrix.is_empty() {
        return Err(Error::Ingest("no qualifying shot plays".into()));
    }
    Ok(set)
}
