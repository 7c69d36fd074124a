//! How the scheduler orders competing tasks and picks a destination
//! station, shown on hand-built candidates.

use agm::clock::sim_time;
use agm::domain::{Pose3, Worker, Workstation};
use agm::scheduler::{pick_destination, rank, CandidateTask};

fn task(instance: &str, priority: i64, x: f64, created: f64) -> CandidateTask {
    CandidateTask {
        instance_id: instance.into(),
        step_index: 1,
        priority,
        source_station: format!("src-{instance}"),
        destination_station: "M1".into(),
        source_pose: Pose3::at(x, 0.0),
        destination_pose: Pose3::at(10.0, 0.0),
        created_at: sim_time(created),
    }
}

fn main() {
    let mut worker = Worker::new("w1", "amr-1", "amr", sim_time(0.0));
    worker.pose = Pose3::at(0.0, 0.0);
    let candidates = vec![
        task("far-urgent", 2, 40.0, 0.0),
        task("near", 0, 1.0, 5.0),
        task("mid", 0, 6.0, 0.0),
        task("near-older", 0, 1.0, 2.0),
        task("urgent", 2, 3.0, 9.0),
    ];
    println!("priority first, then distance, then age, then id:");
    for (n, c) in rank(candidates, &worker).iter().enumerate() {
        println!(
            "  {}. {:<11} priority {} distance {:>4.1} created +{}s",
            n + 1,
            c.instance_id,
            c.priority,
            c.source_pose.x,
            (c.created_at - sim_time(0.0)).num_seconds()
        );
    }

    let mut stations = vec![
        Workstation::new("M2", "milling", Pose3::at(5.0, 3.0), 2),
        Workstation::new("M1", "milling", Pose3::at(5.0, 0.0), 2),
        Workstation::new("M3", "milling", Pose3::at(5.0, 6.0), 2),
    ];
    stations[1].occupancy = 1;
    println!("destination: least loaded, ties by id");
    for s in &stations {
        println!("  {} occupancy {}/{}", s.id, s.occupancy, s.capacity);
    }
    println!("  -> {}", pick_destination("milling", &stations).map_or("none", |s| s.id.as_str()));
}
