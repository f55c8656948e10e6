use clap::Parser;

use vec2gc::cli::{run, Cli};

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            // Usage mistakes are input errors; 2 is reserved for broken invariants.
            std::process::exit(if e.use_stderr() { 1 } else { 0 });
        }
    };
    if let Err(e) = run(cli) {
        eprintln!("vec2gc: error: {e}");
        std::process::exit(e.exit_code());
    }
}
