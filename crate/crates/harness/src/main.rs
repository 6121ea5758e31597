fn main() {
    let argv: Vec<String> = std::env::args().collect();
    let code =
        nlprompt_harness::cli::cli_main(&argv, &mut std::io::stdout(), &mut std::io::stderr());
    std::process::exit(code);
}
