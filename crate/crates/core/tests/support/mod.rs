pub mod attention_checks;
pub mod cka_checks;
pub mod combine_checks;
pub mod generators;
pub mod gradient_suite;
pub mod metric_checks;
pub mod oracles;
