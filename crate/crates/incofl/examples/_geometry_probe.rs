use std::collections::BTreeMap;

use incofl::model::{forward, local_train};
use incofl::tensor::{inner, norm};
use incofl::{
    aggregate, build_plan, dirichlet_partition, sample_clients, synth_teacher, Dataset,
    ExperimentConfig, GroupSpec, ServerModel, ServerState,
};

fn main() {
    let toml = std::fs::read_to_string(std::env::args().nth(1).expect("config path")).unwrap();
    let cfg: ExperimentConfig = ExperimentConfig::from_toml_str(&toml).unwrap();
    let run_seed = 0u64;

    let data = match &cfg.data {
        incofl::DataConfig::Teacher {
            n,
            dim,
            classes,
            teacher_depth,
            teacher_width,
            seed,
        } => synth_teacher(*n, *dim, *classes, *teacher_depth, *teacher_width, *seed),
        _ => panic!("expected teacher data"),
    };
    let mut pcfg = cfg.partition.clone();
    pcfg.seed = incofl::seeding::derive_seed(cfg.partition.seed, "partition-run", &[run_seed]);
    let shards = dirichlet_partition(data.labels(), &pcfg).unwrap();

    let init_seed = incofl::seeding::derive_seed(run_seed, "model-init", &[]);
    let mut state = ServerState::new(&cfg, init_seed).unwrap();
    let plan = build_plan(&cfg.groups, cfg.model.stages).unwrap();
    let group_of: BTreeMap<usize, &GroupSpec> = cfg
        .groups
        .iter()
        .flat_map(|g| g.client_ids.iter().map(move |&c| (c, g)))
        .collect();

    let mut tcfg = cfg.trainer.clone();
    tcfg.seed = incofl::seeding::derive_seed(cfg.trainer.seed, "trainer-run", &[run_seed]);

    for round in 1..=cfg.rounds {
        let sampled = sample_clients(round, &cfg, run_seed);
        let mut deltas = BTreeMap::new();
        for &client in &sampled {
            let group = group_of[&client];
            let model = state
                .distribute(group.group_id, &group.depth_per_stage)
                .unwrap();
            let (feat, lab) = data.batch(&shards[client]);
            let shard = Dataset::new(feat, lab, data.num_classes()).unwrap();
            let report = local_train(&model, &shard, &tcfg, &model, round as u64, client as u64)
                .unwrap();
            deltas.insert(client, report.delta);
        }
        if round % 20 == 0 || round == 1 {
            let mut contributions: BTreeMap<_, BTreeMap<_, _>> = BTreeMap::new();
            for (&client, delta) in &deltas {
                contributions.insert(client, delta.stage_layers.clone());
            }
            let sampled_set: std::collections::BTreeSet<_> = sampled.iter().copied().collect();
            let restricted = plan.restrict(&sampled_set);
            let agg = aggregate(&restricted, &contributions).unwrap();
            for stage in 0..cfg.model.stages {
                let anchor = &agg[&incofl::LayerKey::new(stage, 0)];
                let n0 = norm(anchor);
                print!("round {round:>3} stage {stage}: |g0| {n0:.4}");
                for (key, gk) in agg.iter() {
                    if key.stage == stage && key.index_in_stage > 0 {
                        let nk = norm(gk);
                        let b = inner(gk, anchor).unwrap() / (nk * n0).max(1e-12);
                        print!("  L{} |gk| {nk:.4} cos {b:+.2}", key.index_in_stage);
                    }
                }
                println!();
            }
        }
        let _ = incofl::server_round(&mut state, deltas, &cfg);
        let _ = &state.model;
    }

    if let ServerModel::Unified(w) = &state.model {
        let logits = forward(w, data.features()).unwrap().logits;
        let acc = incofl::metrics::accuracy(&logits, data.labels());
        println!("final unified-model train acc {acc:.4}");
    }

}
