use clap::Parser;

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = hidalgo::cli::Cli::parse();
    match hidalgo::cli::run(&cli) {
        Ok(manifest) => {
            for f in &manifest.outputs {
                println!("{}", f.path);
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(1);
        }
    }
}
