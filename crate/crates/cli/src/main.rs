use clap::Parser;

use ddlab_cli::{run, threads_from_env, Cli, CliError};

fn main() {
    let cli = Cli::parse();
    let result = threads_from_env().and_then(|threads| {
        if let Some(k) = threads {
            rayon::ThreadPoolBuilder::new()
                .num_threads(k)
                .build_global()
                .map_err(|e| CliError::Data(format!("cannot start {k} worker threads: {e}")))?;
        }
        run(cli)
    });
    if let Err(e) = result {
        eprintln!("ddlab: {e}");
        std::process::exit(e.exit_code());
    }
}
