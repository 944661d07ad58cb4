fn main() {
    use shampoo::psd::{sym_eig, SymMatrix};
    let n = 256;
    let mut d = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            d[i * n + j] = ((i * 7 + j * 13) % 17) as f64 + if i == j { 100.0 } else { 0.0 };
        }
    }
    for i in 0..n {
        for j in 0..i {
            d[i * n + j] = d[j * n + i];
        }
    }
    let a = SymMatrix::new(n, d).unwrap();
    let t = std::time::Instant::now();
    for _ in 0..10 {
        sym_eig(&a).unwrap();
    }
    println!("{:?} per eig", t.elapsed() / 10);
}
