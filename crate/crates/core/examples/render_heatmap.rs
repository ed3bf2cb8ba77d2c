//! Render one synthetic day as a grayscale PGM heatmap.
//!
//! Usage: render_heatmap [OUT.pgm]

use tgnet::datagen::{generate_day, SyntheticNetworkConfig};
use tgnet::formats::{parse_pgm, render_pgm};
use tgnet::traffic_image::complete_matrix;

fn main() -> tgnet::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "heatmap.pgm".into());
    let cfg = SyntheticNetworkConfig::default();
    let day = complete_matrix(&generate_day(&cfg, 0)?)?;
    let bytes = render_pgm(&day.grid, 80.0, &day.day_label)?;
    std::fs::write(&out, &bytes)?;
    let (w, h, pixels) = parse_pgm(&bytes)?;
    let dark = pixels.iter().filter(|&&p| p < 64).count();
    println!("wrote {out}: {w}x{h}, {dark} pixels below 20 km/h");
    Ok(())
}
