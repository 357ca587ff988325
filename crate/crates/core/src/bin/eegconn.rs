use std::io;

fn main() {
    let code = eegconn::cli::run_with(std::env::args_os().collect(), &mut io::stdout(), &mut io::stderr());
    std::process::exit(code);
}
