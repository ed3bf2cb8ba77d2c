//! Layer shapes and parameter counts of the CNN presets.

use tgnet::cnn::build_preset;
use tgnet::traffic_image::TaskSpec;

fn main() -> tgnet::Result<()> {
    let divisor: usize = std::env::args().nth(1).map_or(Ok(1), |s| s.parse()).expect("divisor must be an integer");
    let task = TaskSpec::preset(2, 236)?;
    for depth in 1..=4 {
        let net = build_preset(depth, &task, divisor)?;
        println!("depth {depth}: {} parameters", net.param_count());
        println!("  {}", net.describe());
        let chain: Vec<String> = net.shape_chain().iter().map(|s| format!("{s:?}")).collect();
        println!("  {}", chain.join(" -> "));
    }
    Ok(())
}
