//! Measurement perturbations: Gaussian noise, PGD and momentum attacks on
//! MoDL, the end-to-end attack through purification, and forward-operator
//! mismatches.

mod attack;
mod operator;

pub use attack::{
    e2e_attack, momentum_attack, pgd_attack, pgd_attack_with_reference, random_perturb, AttackConfig, AttackTarget,
    AttackTrace, Perturbation,
};
pub use operator::{perturb_operator, OperatorChange};
