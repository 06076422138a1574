use refsr_core::selfcheck::{self, PRIMITIVES};

#[test]
fn every_primitive_on_three_random_shapes() {
    let mut failed = Vec::new();
    for (i, name) in PRIMITIVES.iter().enumerate() {
        let r = selfcheck::check_primitive(name, 3, 1000 + i as u64, None).unwrap();
        println!("{r}");
        if !r.passed {
            failed.push(r.name);
        }
    }
    assert!(failed.is_empty(), "{failed:?}");
}

#[test]
fn primitives_pass_for_other_seeds() {
    for seed in [7, 8] {
        for r in selfcheck::primitive_gradient_checks(3, seed).unwrap() {
            assert!(r.passed, "{r}");
        }
    }
}

#[test]
fn discriminator_loss() {
    let r = selfcheck::discriminator_loss_check(21).unwrap();
    println!("{r}");
    assert!(r.passed, "{r}");
}

#[test]
fn perturbed_conv_backward_is_caught() {
    for seed in 0..3 {
        let r = selfcheck::mutation_check(seed).unwrap();
        assert!(r.passed, "{r}");
        assert!(r.value > 1e-3);
    }
}
