use std::io;

fn main() {
    qvote::cli::init_logging();
    let code = qvote::cli::run_cli(std::env::args_os(), &mut io::stdout(), &mut io::stderr());
    std::process::exit(code);
}
