//! Pick the median keyframe of a shot and preprocess it to the model size.

use ganlink::data::{preprocess_image, select_representative_keyframe, to_rgb, write_ppm, RgbImage};

fn main() {
    let frames: Vec<RgbImage> = [40u8, 120, 125, 130, 250]
        .iter()
        .map(|&v| RgbImage::filled(48, 27, [v, v / 2, 255 - v]))
        .collect();
    let (index, frame) = select_representative_keyframe(&frames).unwrap();
    println!("representative keyframe: {index}");
    let values = preprocess_image(frame, 16).unwrap();
    let (lo, hi) = values.iter().fold((f64::MAX, f64::MIN), |(a, b), &v| (a.min(v), b.max(v)));
    println!("{} values in [{lo:.3}, {hi:.3}]", values.len());
    let path = std::env::temp_dir().join("ganlink_keyframe.ppm");
    write_ppm(&path, &to_rgb(&values, 16).unwrap()).unwrap();
    println!("wrote {}", path.display());
}
