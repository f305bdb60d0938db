fn main() {
    // Rust ships with SIGPIPE ignored, which turns `metatool ... | head`
    // into a panic inside println!. Die quietly like any other CLI.
    #[cfg(unix)]
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
    std::process::exit(metatool::cli::run());
}
