use zoopt_core::problems::{seeded_victim, victim_inputs, victim_model};

const GOLDEN: [([f64; 4], usize); 10] = [
    ([-0.07254633209954423, 0.5479137703859353, -2.0056409084013813, 0.2676765103564989], 1),
    ([0.2732100783773695, 1.1222045548221546, -1.3687989547015003, -0.23303171552458246], 1),
    ([0.2455268812953684, 1.3567093747912848, -0.9842503352523905, 0.013271685377457307], 1),
    ([0.13737596736464117, 0.49750088532329273, -1.5517143608823936, 0.18677972331889625], 1),
    ([-0.12144859746822441, 0.7426658889515654, 0.02914414134394377, -0.31425409354799855], 1),
    ([-0.7628464031179335, -0.7454264108327794, 1.6177374892333827, -1.0708667542807295], 2),
    ([-0.6201826123462955, 0.8284768024364513, -0.6361672896574904, 0.4193163314982022], 1),
    ([0.24745821433998075, 0.8975087858335173, -1.8943250032605388, -0.05304779003256334], 1),
    ([-0.3850796484374166, -1.0801948624707385, -0.3863292845471117, 0.5014722378260239], 3),
    ([-0.6061988743189654, -0.17354200715588425, 0.8914525859819373, -1.2111548510620376], 2),
];

#[test]
fn pinned_victim_logits_are_frozen() {
    let model = victim_model();
    let (images, labels) = victim_inputs();
    assert_eq!(images.len(), GOLDEN.len());
    for ((x, &label), (logits, golden_label)) in images.iter().zip(&labels).zip(GOLDEN) {
        let z = model.forward(x.as_slice()).unwrap();
        for (a, b) in z.iter().zip(logits) {
            assert!((a - b).abs() <= 1e-12, "{z:?} vs {logits:?}");
        }
        assert_eq!(label, golden_label);
    }
}

#[test]
fn pinned_file_matches_its_generator() {
    assert_eq!(victim_model().to_json(), seeded_victim().unwrap().to_json());
}
