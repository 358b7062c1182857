mod common;

use gtgib_core::numerics::grad_check;
use gtgib_core::numerics::{Rng, Tape};
use gtgib_core::train::Trainer;

/// Full objective (cross-entropy plus both bottleneck terms) on a six-node
/// graph with two layers. With the straight-through wrapper disabled the
/// loss is smooth in the parameters, and every random draw is replayed.
#[test]
fn full_loss_matches_central_differences() {
    let g = common::random_graph(6, 40, 3, 11);
    let mut exp = common::small_experiment();
    exp.model.layers = 2;
    exp.model.dim = 8;
    exp.filter.straight_through = false;
    exp.split.inductive_fraction = 0.0;
    exp.loss.alpha = 1.0;
    exp.loss.beta = 0.1;
    let mut trainer = Trainer::new(&g, exp).unwrap();
    trainer.train_epoch(0).unwrap();
    // evaluate at a generic point: the zero-initialized retention heads would
    // otherwise leave gradients near the roundoff floor
    let mut store = trainer.store.clone();
    let mut r = Rng::new(5, 0);
    for id in store.ids().collect::<Vec<_>>() {
        if store.get(id).name.contains("retain") {
            store.value_mut(id).data_mut().iter_mut().for_each(|x| *x = 0.5 * r.normal());
        }
    }
    let report = grad_check(&store, 1e-5, |tape: &mut Tape, s| trainer.batch_loss(tape, s, 0..14).map(|r| r.0)).unwrap();
    assert!(report.checked > 500, "only {} entries checked", report.checked);
    assert!(report.max_rel_err < 1e-4, "max relative error {:e} at {:?}", report.max_rel_err, report.worst);
}
