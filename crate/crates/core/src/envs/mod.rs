//! Offline data sources: the annulus world, gridworlds, task rewards and
//! the on-disk dataset format.

mod dataset;
mod donut;
mod gridworld;
mod tasks;

pub(crate) use dataset::ByteReader;
pub use dataset::{read_dataset, write_dataset, OfflineDataset, TransitionRecord, DATASET_MAGIC, DATASET_VERSION};
pub use donut::{collect_donut, compass_actions, quantize_action, support_stats, DonutWorld, DONUT_TAG, WALK_LENGTH};
pub use gridworld::{build_gridworld, collect_tabular, one_hot, state_index, GRID_ACTIONS, TABULAR_TAG};
pub use tasks::{TaskKind, TaskReward, DONUT_TASKS};
