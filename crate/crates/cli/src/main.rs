fn main() {
    println!("phsf");
}
