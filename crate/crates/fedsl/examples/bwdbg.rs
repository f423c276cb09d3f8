fn main() {
    let s0: f64 = 26923537.03721637;
    let s1: f64 = 36761842.066251874;
    let b: f64 = 63685379.10346825;
    let mut shares = [s0, s1];
    for it in 0..12 {
        let total: f64 = shares.iter().sum();
        println!("it {it}: total={total:.17e} b={b:.17e} eq={}", total == b);
        if total == b { break; }
        let corrected = shares[0] + (b - total);
        println!("   s0={:.17e} corrected={:.17e} changed={}", shares[0], corrected, corrected != shares[0]);
        if corrected == shares[0] {
            shares[0] = if total < b { shares[0].next_up() } else { shares[0].next_down() };
        } else {
            shares[0] = corrected;
        }
    }
    println!("final shares {shares:?}");
}
