//! Compare every hand-written backward pass against central differences.
//!
//!     cargo run --release --example grad_check [seed] [instances]

use prelex::gradsuite::{run_suite, EPSILON, TOLERANCE};

fn main() -> prelex::Result<()> {
    let mut args = std::env::args().skip(1);
    let seed = args.next().map_or(0, |s| s.parse().expect("seed"));
    let instances = args.next().map_or(10, |s| s.parse().expect("instance count"));
    println!("epsilon {EPSILON:e}, relative tolerance {TOLERANCE:e}");
    let start = std::time::Instant::now();
    for s in run_suite(seed, instances)? {
        println!(
            "{:<26} {}/{} max error {:.2e} {}",
            s.name,
            s.passed,
            s.instances,
            s.max_error,
            s.failure.unwrap_or_default()
        );
    }
    println!("{:.2?}", start.elapsed());
    Ok(())
}
