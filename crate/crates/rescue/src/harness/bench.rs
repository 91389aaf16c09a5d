//! Recovery time against node count.

use std::fmt::Write as _;
use std::time::Duration;

use super::process::{free_port, MasterLaunch, MasterProcess};
use super::scenario::ScenarioEnv;
use super::sim::{SimNode, SimNodeSpec, TopicSpec};
use super::wait_checkpoint;

pub const BENCH_SIZES: [usize; 6] = [1, 5, 10, 20, 40, 80];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BenchRow {
    pub n_nodes: usize,
    pub trials: usize,
    /// Mean load + reconcile time reported by the master.
    pub time_to_recover_s: f64,
    /// Mean time from exec until the restarted master answers.
    pub total_start_s: f64,
}

/// Node `i` of `n` publishes `/bench/t{i}` and subscribes to the next
/// node's topic.
pub fn mixed_spec(i: usize, n: usize) -> SimNodeSpec {
    let ty = "std_msgs/String";
    SimNodeSpec {
        name: format!("/bench/node{i}"),
        publishes: vec![TopicSpec::new(&format!("/bench/t{i}"), ty)],
        subscribes: vec![TopicSpec::new(&format!("/bench/t{}", (i + 1) % n), ty)],
        services: vec![],
    }
}

/// Registers `n` mixed nodes, then kills and restarts the master `trials`
/// times with all nodes alive.
pub fn bench_recovery(env: &ScenarioEnv, n: usize, trials: usize) -> Result<BenchRow, String> {
    if trials == 0 {
        return Err("at least one trial is needed".into());
    }
    let dir = env.workdir.join(format!("bench-{n}"));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).map_err(|e| format!("create {}: {e}", dir.display()))?;
    let launch = MasterLaunch {
        rescue: true,
        checkpoint_path: Some(dir.join("latest-chkpt.yaml")),
        ..MasterLaunch::new(&env.master_bin, free_port())
    };
    let path = launch.checkpoint_path.clone().expect("set above");
    let start = |launch: &MasterLaunch| -> Result<(MasterProcess, Duration), String> {
        let mut m = MasterProcess::spawn(launch).map_err(|e| format!("spawn master: {e}"))?;
        let ready = m
            .wait_ready(Duration::from_secs(20))
            .ok_or_else(|| format!("master not ready: {:?}", m.output()))?;
        Ok((m, ready))
    };

    let (mut master, _) = start(&launch)?;
    let nodes = (0..n)
        .map(|i| SimNode::spawn(mixed_spec(i, n), master.uri()).map_err(|e| e.to_string()))
        .collect::<Result<Vec<_>, _>>()?;
    wait_checkpoint(&path, |s| s.nodes().count() == n, Duration::from_secs(10))?;

    let (mut recover_s, mut total_s) = (0.0, 0.0);
    for _ in 0..trials {
        master.kill();
        let (m, ready) = start(&launch)?;
        master = m;
        let ms = master
            .recovery_ms(Duration::from_secs(5))
            .ok_or_else(|| format!("no recovery summary: {:?}", master.output()))?;
        recover_s += ms / 1e3;
        total_s += ready.as_secs_f64();
    }
    drop(nodes);
    Ok(BenchRow {
        n_nodes: n,
        trials,
        time_to_recover_s: recover_s / trials as f64,
        total_start_s: total_s / trials as f64,
    })
}

fn cpu_model() -> String {
    std::fs::read_to_string("/proc/cpuinfo")
        .ok()
        .and_then(|info| {
            info.lines()
                .find(|l| l.starts_with("model name"))
                .and_then(|l| l.split(':').nth(1))
                .map(|m| m.trim().to_string())
        })
        .unwrap_or_else(|| "unknown".into())
}

pub fn csv(rows: &[BenchRow]) -> String {
    let cpus = std::thread::available_parallelism().map_or(0, |n| n.get());
    let mut out = String::new();
    let _ = writeln!(out, "# cpu: {} ({cpus} threads)", cpu_model());
    let _ = writeln!(out, "# os: {} {}", std::env::consts::OS, std::env::consts::ARCH);
    out.push_str("n_nodes,trials,time_to_recover_s,total_start_s\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{:.6},{:.6}",
            r.n_nodes, r.trials, r.time_to_recover_s, r.total_start_s
        );
    }
    out
}
