use std::io::Write;

fn main() {
    let e = mbqc_selftest::cli::execute(std::env::args_os());
    let _ = std::io::stdout().write_all(e.stdout.as_bytes());
    let _ = std::io::stderr().write_all(e.stderr.as_bytes());
    std::process::exit(e.code);
}
