//! Layer-wise averaging across nested architecture groups.
//!
//! Run with: cargo run --example hetero_aggregation

use std::collections::BTreeMap;

use incofl::{aggregate, build_plan, GroupSpec, LayerKey, Tensor};

fn main() -> incofl::Result<()> {
    // Three groups sharing one stage: depth 1, 2, and 3. Every client
    // owns layer 0; only the deepest client owns layer 2.
    let groups = vec![
        GroupSpec::new(1, vec![1], vec![0, 1]),
        GroupSpec::new(2, vec![2], vec![2]),
        GroupSpec::new(3, vec![3], vec![3]),
    ];
    let plan = build_plan(&groups, 1)?;
    println!("contributor plan");
    for layer in plan.layers() {
        let clients: Vec<usize> = plan.contributors(layer).iter().map(|&(c, _)| c).collect();
        println!("  layer {layer}: clients {clients:?}");
    }

    // Scalar deltas make the means easy to check by eye. Client i sends
    // the value i + 1 for every layer it owns.
    let mut contributions: BTreeMap<usize, BTreeMap<LayerKey, Tensor>> = BTreeMap::new();
    for (client, group) in [(0usize, 0usize), (1, 0), (2, 1), (3, 2)] {
        let depth = groups[group].depth_per_stage[0];
        let mut per_layer = BTreeMap::new();
        for index in 0..depth {
            per_layer.insert(
                LayerKey::new(0, index),
                Tensor::vector(vec![client as f64 + 1.0])?,
            );
        }
        contributions.insert(client, per_layer);
    }
    let aggregated = aggregate(&plan, &contributions)?;
    println!("aggregated deltas");
    for (layer, delta) in &aggregated {
        println!("  layer {layer}: {}", delta.values()[0]);
    }
    println!();
    println!("layer s0.l0 averages all four clients: (1+2+3+4)/4 = 2.5");
    println!("layer s0.l1 averages clients 2 and 3:  (3+4)/2   = 3.5");
    println!("layer s0.l2 comes from client 3 alone:            4");
    Ok(())
}
