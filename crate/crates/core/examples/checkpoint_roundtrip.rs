//! Save a model, load it back and confirm the embeddings are unchanged.

use ganlink::checkpoint::{load_checkpoint, save_checkpoint};
use ganlink::data::{generate_synthetic_dataset, SyntheticSpec};
use ganlink::models::AeConfig;
use ganlink::retrieval::embed_corpus;
use ganlink::training::{train_ae, TrainConfig};

fn main() {
    let syn = generate_synthetic_dataset(&SyntheticSpec { segments_per_class: 20, ..Default::default() }).unwrap();
    let cfg = AeConfig { text_dim: 32, visual_dim: 768, branch: 32, hidden: 16, modality_dropout: 0.0 };
    let (bundle, _) = train_ae(&syn.dataset, &cfg, &TrainConfig { epochs: 5, ..Default::default() }).unwrap();
    let path = std::env::temp_dir().join("ganlink_ae.cghl");
    save_checkpoint(&bundle, &path).unwrap();
    let back = load_checkpoint(&path).unwrap();
    let (a, b) = (embed_corpus(&bundle, &syn.dataset).unwrap(), embed_corpus(&back, &syn.dataset).unwrap());
    let same = a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits());
    println!("{} bytes, fingerprint {}, embeddings bitwise equal: {same}", std::fs::metadata(&path).unwrap().len(), back.fingerprint());
}
