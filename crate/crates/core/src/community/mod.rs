//! Co-posting graph, Louvain communities, and the within/across community
//! cohesion test.

mod cohesion;
mod graph;
mod louvain;

pub use cohesion::{cohesion_test, welch_t_test, CohesionTestResult, WelchTest};
pub use graph::CoPostGraph;
pub use louvain::{louvain, modularity, CommunityPartition, LouvainOptions};
