//! A short seeded run that writes its manifest, metrics and checkpoint, then
//! reloads the checkpoint and evaluates it on the test split.

use hgmn::config::ModelConfig;
use hgmn::fixtures;
use hgmn::hetgraph::HeteroGraph;
use hgmn::report::RunManifest;
use hgmn::synthetic::{generate, SyntheticSpec};
use hgmn::train::{Checkpoint, Trainer};

fn main() -> hgmn::Result<()> {
    let spec = SyntheticSpec { items: 90, contexts: 30, ..Default::default() };
    let g = HeteroGraph::from_document(&generate(&spec)?)?;
    let config = ModelConfig { num_epochs: 30, learning_rate: 2e-2, ..fixtures::gradcheck_config() };
    let dir = std::env::temp_dir().join(format!("hgmn-roundtrip-{}", std::process::id()));

    let mut manifest = RunManifest::new(&config);
    let mut trainer = Trainer::new(&g, &config)?;
    for record in trainer.run(|_| {})? {
        manifest.push_epoch(&record);
    }
    manifest.best_epoch = Some(trainer.best_epoch);
    manifest.test = Some(trainer.evaluate_best(&g.splits().test)?.into());
    manifest.write(&dir)?;
    trainer.best_checkpoint().save(dir.join("best.bin"))?;

    let restored = Checkpoint::load(dir.join("best.bin"))?.restore_model(&g)?;
    let prepared = hgmn::model::Prepared::new(&g, &restored.config)?;
    let logits = restored.logits(&prepared)?;
    let m = hgmn::model::loss_and_metrics(&logits, g.labels(), &g.splits().test)?;
    let csv = std::fs::read_to_string(dir.join("metrics.csv"))?;
    let lines: Vec<&str> = csv.lines().collect();
    println!("{}\n...\n{}", lines[..4].join("\n"), lines[lines.len() - 3..].join("\n"));
    println!("reloaded best checkpoint: test acc {:.3}, macro-F1 {:.3}", m.accuracy, m.macro_f1);
    println!("artifacts in {}", dir.display());
    Ok(())
}
