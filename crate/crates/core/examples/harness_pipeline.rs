//! Runs every harness command on a tiny configuration in a scratch
//! directory and prints the final report.

use paramspec::harness::{
    cmd_finetune, cmd_gen_data, cmd_hallucination, cmd_pss, cmd_report, cmd_train, ExperimentConfig,
};

fn main() -> paramspec::Result<()> {
    env_logger::init();
    let dir = std::env::temp_dir().join("paramspec-pipeline");
    let mut cfg = ExperimentConfig {
        output_dir: dir.clone(),
        ..ExperimentConfig::default()
    };
    cfg.corpus.n_concepts = 18;
    cfg.corpus.finetune_concepts = 2;
    cfg.model.d_model = 32;
    cfg.model.d_mlp = 64;
    cfg.model.n_layers = 2;
    cfg.model.n_heads = 2;
    cfg.model.max_seq = 64;
    cfg.train.steps = 40;
    cfg.train.seq_len = 32;
    cfg.train.batch_size = 4;
    cfg.checkpoints = vec![10, 20, 40];
    cfg.surgery.concepts = Some(vec![0, 1, 2]);
    cfg.surgery.all_checkpoints = true;
    cfg.finetune.seeds = vec![0];
    cfg.finetune.train.steps = 5;
    cfg.finetune.train.seq_len = 32;
    cfg.finetune.train.batch_size = 4;
    cfg.hallucination.max_questions = Some(8);
    cfg.hallucination.options.sampling.n_samples = 4;
    cfg.hallucination.options.neighbours = 4;

    cmd_gen_data(&cfg)?;
    cmd_train(&cfg, None)?;
    cmd_pss(&cfg)?;
    let (outcomes, _) = cmd_finetune(&cfg)?;
    for o in &outcomes {
        println!("{}: new-fact accuracy {:.2}", o.variant, o.new_accuracy);
    }
    let h = cmd_hallucination(&cfg)?;
    println!("semantic entropy {:.3}", h.metrics["semantic_entropy"]);
    println!("{}", cmd_report(&[cfg.results_log()])?.render());
    println!("artifacts in {}", dir.display());
    Ok(())
}
