fn main() {
    eprintln!("bulkedge: cli wiring pending");
    std::process::exit(1);
}
