//! Trains every variant on the synthetic blob/noise set until it fits.

use std::time::Instant;

use kutralnet::data::synthetic::write_blob_noise_set;
use kutralnet::data::ImageLoader;
use kutralnet::train::{train, TrainConfig};
use kutralnet::{build_variant, Variant};

fn main() -> kutralnet::Result<()> {
    let dir = std::env::temp_dir().join("kutralnet-blob-noise");
    let manifest = write_blob_noise_set(&dir, 32, 84, 0)?;
    let variants: Vec<Variant> = match std::env::args().nth(1) {
        Some(v) => vec![v.parse()?],
        None => Variant::ALL.to_vec(),
    };
    for v in variants {
        let mut model = build_variant::<f32>(v, 0)?;
        let mut loader = ImageLoader::new(Some(dir.clone()), 84).with_cache();
        let mut cfg = TrainConfig::for_variant(v);
        cfg.epochs = 200;
        cfg.schedule = None;
        cfg.stop_at_train_accuracy = Some(1.0);
        let start = Instant::now();
        let h = train(&mut model, &manifest, &mut loader, &cfg)?;
        let last = h.records.last().unwrap();
        println!(
            "{v}: {} epochs, final loss {:.4}, train acc {:?}, {:.1}s",
            last.epoch,
            last.train_loss,
            last.train_acc,
            start.elapsed().as_secs_f64()
        );
    }
    Ok(())
}
