//! Render images for each class word after a short CGAN run.

use ganlink::data::{generate_synthetic_dataset, SyntheticData, SyntheticSpec};
use ganlink::models::{CganConfig, DiscriminatorConfig, GeneratorConfig};
use ganlink::training::{train_cgan, TrainConfig};
use ganlink::viz::{mean_hue, render_text_to_images, write_image};

fn main() {
    let syn = generate_synthetic_dataset(&SyntheticSpec::default()).unwrap();
    let cfg = CganConfig {
        generator: GeneratorConfig { noise_dim: 10, text_dim: 32, text_fc: 64, deconv_maps: vec![16, 8], image_size: 16, channels: 3 },
        discriminator: DiscriminatorConfig { conv_maps: vec![8, 16], text_dim: 32, text_fc: 64, join_maps: 16, image_size: 16, channels: 3 },
    };
    let (bundle, _) = train_cgan(&syn.dataset, &cfg, &TrainConfig { epochs: 40, seed: 2, ..Default::default() }).unwrap();
    let out = std::env::temp_dir().join("ganlink_text_to_image");
    std::fs::create_dir_all(&out).unwrap();
    for (c, word) in (0..syn.prototypes.len()).map(|c| (c, SyntheticData::class_word(c))) {
        let phi = syn.vocabulary.get(&word).unwrap();
        let images = render_text_to_images(&bundle, phi, 4, 0).unwrap();
        for img in &images {
            write_image(img, out.join(format!("{word}_{}.ppm", img.provenance.index))).unwrap();
        }
        let hue = mean_hue(&images.iter().map(|i| &i.pixels[..]).collect::<Vec<_>>());
        println!("{word}: mean hue {hue:5.1}°, motif hue {:5.1}°", ganlink::data::class_hue(c, 4));
    }
    println!("images in {}", out.display());
}
