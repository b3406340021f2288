//! Invert a trained generator on each class motif and list the nearest words.

use ganlink::data::{generate_synthetic_dataset, SyntheticSpec};
use ganlink::models::{CganConfig, DiscriminatorConfig, GeneratorConfig};
use ganlink::training::{train_cgan, TrainConfig};
use ganlink::viz::{invert_generator, nearest_words, slice_text_part};

fn main() {
    let syn = generate_synthetic_dataset(&SyntheticSpec::default()).unwrap();
    let g = GeneratorConfig { noise_dim: 10, text_dim: 32, text_fc: 64, deconv_maps: vec![16, 8], image_size: 16, channels: 3 };
    let cfg = CganConfig {
        generator: g.clone(),
        discriminator: DiscriminatorConfig { conv_maps: vec![8, 16], text_dim: 32, text_fc: 64, join_maps: 16, image_size: 16, channels: 3 },
    };
    let (bundle, _) = train_cgan(&syn.dataset, &cfg, &TrainConfig { epochs: 40, seed: 2, ..Default::default() }).unwrap();
    for (c, motif) in syn.motifs.iter().enumerate() {
        let pre = invert_generator(&bundle, motif).unwrap();
        let phi = slice_text_part(&pre, g.noise_dim, g.text_dim).unwrap();
        let words = nearest_words(&phi, &syn.vocabulary, 4).unwrap();
        let list: Vec<String> = words.0.iter().map(|(w, s)| format!("{w} ({s:.2})")).collect();
        println!("motif {c}: {}", list.join(", "));
    }
}
