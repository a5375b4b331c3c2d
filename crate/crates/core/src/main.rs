use std::process::ExitCode;

fn main() -> ExitCode {
    recipe_diffusion::cli::run(std::env::args_os())
}
