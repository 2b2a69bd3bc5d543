//! Runs the matcher on a procedural synthetic pair and prints accuracy per
//! iteration plus the final report.
//!
//! Usage: `synthetic [identity|affine|mls] [seed] [key=value ...]`

use dctm::eval::{endpoint_accuracy, flow_from_affine};
use dctm::image::{upsample_field, AffineField};
use dctm::pipeline::{dctm_match_observed, DctmConfig};
use dctm::synth::{synth_pair, WarpSpec};
use dctm::textures::procedural_texture;

fn main() -> dctm::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let kind = args.first().map(String::as_str).unwrap_or("affine");
    let seed: u64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    let mut cfg = DctmConfig::default();
    for kv in args.iter().skip(2) {
        let (k, v) = kv.split_once('=').expect("arguments after the seed are key=value");
        cfg.set(k, v).map_err(dctm::Error::Config)?;
    }
    let (spec, threshold) = match kind {
        "identity" => (WarpSpec::Identity, 0.5),
        "affine" => (WarpSpec::parse("affine:theta=15,sx=1.2,sy=1.2,tx=10,ty=-6")?, 2.0),
        _ => (WarpSpec::parse("mls:k=4,max=12")?, 3.0),
    };
    let (w, h) = (256, 192);
    let pair = synth_pair(&procedural_texture(w, h, seed), &spec, seed)?;
    let gt = flow_from_affine(&pair.gt);
    let accuracy = |f: &AffineField| {
        let up = upsample_field(f, w, h);
        endpoint_accuracy(&flow_from_affine(&up), &gt, Some(&pair.mask), threshold, None).unwrap()
    };
    let mut observer = |lvl: usize, it: usize, t: &AffineField, l: &AffineField| {
        eprintln!("level {lvl} iter {it}: discrete {:.3} continuous {:.3}", accuracy(t), accuracy(l));
    };
    let (field, report) = dctm_match_observed(&pair.src, &pair.tgt, &cfg, seed, &mut observer)?;
    print!("{}", report.to_text(true));
    println!("accuracy@{threshold}px: {:.4}", accuracy(&field));
    Ok(())
}
