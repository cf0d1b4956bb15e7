// SPDX-License-Identifier: MIT OR Apache-2.0

//! A configuration small enough to train every stage in seconds.

use std::path::Path;

use verbalab::ExperimentConfig;

pub const TINY_TOML: &str = r#"
recipe = "all"
seed = 5
source_layers = [1, 2]
[world]
plain_personas = 16
fantasy_personas = 10
episodes = 40
inverter_episodes = 20
triples_per_relation = 3
biographies = 1
interviews = 1
[model]
n_layers = 2
d_model = 16
n_heads = 2
context_len = 96
[decoder]
layer = 1
rehearsal_plain = 10
rehearsal_patched = 10
[probe]
folds = 2
[eval]
sensitivity_personas = 4
[train.base]
epochs = 1
[train.target_shuffled]
epochs = 1
[train.target_fantasy]
epochs = 1
[train.lit]
epochs = 1
[train.inverter_multi]
epochs = 1
[train.inverter_single]
epochs = 1
"#;

pub fn tiny_config(out: &Path) -> ExperimentConfig {
    let mut c = ExperimentConfig::from_toml(TINY_TOML).expect("tiny config");
    c.out_dir = out.to_path_buf();
    c
}
