fn main() { println!("snake-cr"); }
