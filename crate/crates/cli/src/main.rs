use clap::Parser;

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match samp_cli::Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            std::process::exit(if e.use_stderr() { samp_cli::EXIT_CONFIG } else { 0 });
        }
    };
    std::process::exit(samp_cli::run(cli));
}
