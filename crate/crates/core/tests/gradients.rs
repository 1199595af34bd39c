use std::time::Instant;

use aerial_parse::model::{BackboneConfig, MscConfig, Network, TaskHead, Target};
use aerial_parse::tensor::{check_gradients, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn full_han_msc_graph_matches_finite_differences() {
    let names = |n: usize| (0..n).map(|i| format!("c{i}")).collect::<Vec<_>>();
    let cfg = BackboneConfig::desk(vec![
        TaskHead::multi_class("g", &names(5)),
        TaskHead::multi_class("m", &names(8)),
    ]);
    let net = Network::init(cfg, 21).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let image = Tensor::from_fn(&[3, 32, 32], |_| rng.gen_range(-1.0..1.0));
    let targets = [Target::Class(3), Target::Class(6)];
    let msc = MscConfig::default();
    let start = Instant::now();
    let err = check_gradients(net.params(), 1e-5, |g, p| {
        net.graph_objective(g, p, &image, &targets, &msc)
    })
    .unwrap();
    eprintln!("max relative error {err:.3e} in {:?}", start.elapsed());
    assert!(err <= 1e-4, "max relative error {err}");
}
