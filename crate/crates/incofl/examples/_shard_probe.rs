use incofl::seeding::derive_seed;
use incofl::{dirichlet_partition, synth_classification, PartitionConfig};

fn main() {
    let data = synth_classification(5000, 32, 10, 2.5, 33);
    for run_seed in 0..6u64 {
        let cfg = PartitionConfig {
            num_clients: 20,
            dirichlet_alpha: 0.5,
            seed: derive_seed(0, "partition-run", &[run_seed]),
            min_per_client: 10,
        };
        let shards = dirichlet_partition(data.labels(), &cfg).unwrap();
        let mut sizes: Vec<(usize, usize)> =
            shards.iter().map(|s| s.len()).enumerate().collect();
        sizes.sort_by_key(|&(_, n)| std::cmp::Reverse(n));
        let order: Vec<usize> = sizes.iter().map(|&(i, _)| i).collect();
        let ns: Vec<usize> = sizes.iter().map(|&(_, n)| n).collect();
        println!("run seed {run_seed}: order desc {order:?}");
        println!("             sizes {ns:?}");
    }
}
