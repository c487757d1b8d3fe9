fn main() {
    std::process::exit(vkplate::cli::run());
}
