fn main() {
    env_logger::Builder::from_env(env_logger::Env::new().filter("PPLFORGE_LOG")).init();
    let code = pplforge::cli::run_cli(std::env::args_os(), &mut std::io::stdout(), &mut std::io::stderr());
    std::process::exit(code);
}
