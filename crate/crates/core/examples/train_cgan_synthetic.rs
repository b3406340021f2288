//! Train a small CGAN on the synthetic corpus and report retrieval quality.
//!
//! `cargo run --release --example train_cgan_synthetic -- [epochs]`

use ganlink::data::{generate_synthetic_dataset, SyntheticSpec};
use ganlink::models::{CganConfig, DiscriminatorConfig, GeneratorConfig};
use ganlink::retrieval::{embed_corpus, evaluate};
use ganlink::training::{train_cgan, TrainConfig};

fn main() {
    let epochs = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(20);
    let syn = generate_synthetic_dataset(&SyntheticSpec { seed: 1, ..Default::default() }).unwrap();
    let cfg = CganConfig {
        generator: GeneratorConfig { noise_dim: 10, text_dim: 32, text_fc: 64, deconv_maps: vec![32, 16], image_size: 16, channels: 3 },
        discriminator: DiscriminatorConfig { conv_maps: vec![16, 32], text_dim: 32, text_fc: 64, join_maps: 32, image_size: 16, channels: 3 },
    };
    let train = TrainConfig { epochs, seed: 1, ..Default::default() };
    let (bundle, log) = train_cgan(&syn.dataset, &cfg, &train).unwrap();
    for e in log.epochs.iter().step_by((epochs / 10).max(1)) {
        println!("epoch {:4}  D {:.4}  G {:.4}  {:.2}s", e.epoch, e.mean_loss, e.mean_g_loss.unwrap_or(f64::NAN), e.seconds);
    }
    let (d, g) = log.update_counts();
    println!("{d} discriminator updates, {g} generator updates");
    let emb = embed_corpus(&bundle, &syn.dataset).unwrap();
    let report = evaluate(&[emb], &syn.groundtruth, 10).unwrap();
    println!("P@10 of the discriminator embedding: {:.2}%", report.mean_percent());
}
