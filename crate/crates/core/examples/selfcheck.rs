//! Runs the reduced invariant battery and prints one line per check.
//!
//! cargo run --release --example selfcheck

use ctg_ssl::selfcheck::run_quick;

fn main() -> ctg_ssl::Result<()> {
    let mut ok = true;
    for c in run_quick(0)? {
        println!("{:28} {}  {}", c.name, if c.passed { "PASS" } else { "FAIL" }, c.detail);
        ok &= c.passed;
    }
    std::process::exit(if ok { 0 } else { 1 });
}
