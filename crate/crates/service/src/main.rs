fn main() {
    std::process::exit(cityagent_service::run_cli(std::env::args_os()));
}
