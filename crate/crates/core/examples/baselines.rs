//! Autoencoder and BiDNN baselines next to the single-modality rows.

use ganlink::data::{generate_synthetic_dataset, SyntheticSpec};
use ganlink::models::{AeConfig, BidnnConfig};
use ganlink::retrieval::{embed_corpus, evaluate, format_table, modality_embeddings, EmbeddingSource};
use ganlink::training::{train_ae, train_bidnn, TrainConfig};

fn main() {
    let syn = generate_synthetic_dataset(&SyntheticSpec { text_noise: 0.4, pixel_noise: 0.6, seed: 3, ..Default::default() }).unwrap();
    let data = &syn.dataset;
    let visual_dim = data.visual_dim().unwrap();
    let train = TrainConfig { epochs: 30, seed: 3, ..Default::default() };
    let (ae, _) = train_ae(data, &AeConfig { text_dim: 32, visual_dim, branch: 64, hidden: 64, modality_dropout: 0.2 }, &train).unwrap();
    let (bidnn, _) = train_bidnn(data, &BidnnConfig { text_dim: 32, visual_dim, hidden: 64 }, &train).unwrap();
    let runs = [
        ("text", modality_embeddings(data, EmbeddingSource::TextOnly).unwrap()),
        ("visual", modality_embeddings(data, EmbeddingSource::VisualOnly).unwrap()),
        ("AE", embed_corpus(&ae, data).unwrap()),
        ("BiDNN", embed_corpus(&bidnn, data).unwrap()),
    ];
    let reports: Vec<_> = runs.iter().map(|(l, e)| (*l, evaluate(std::slice::from_ref(e), &syn.groundtruth, 10).unwrap())).collect();
    let rows: Vec<_> = reports.iter().map(|(l, r)| (*l, r)).collect();
    print!("{}", format_table(&rows));
}
