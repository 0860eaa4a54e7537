fn main() {
    println!("{}", evline_core::probe());
}
