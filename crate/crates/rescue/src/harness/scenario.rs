//! Scripted crash scenarios against a real master process.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::{Duration, Instant};

use rescue_core::{EndpointUri, GraphName, MasterState, ParamKey, ParamValue};

use super::process::{free_port, MasterLaunch, MasterProcess};
use super::sim::{SimNode, SimNodeSpec};
use super::wait_checkpoint;
use crate::checkpoint;
use crate::fault::CRASH_EXIT_CODE;
use crate::rpc;
use crate::slave::MASTER_CALLER_ID;
use crate::xmlrpc::{self, Value};

const CHATTER: &str = "/chatter";
const STRING: &str = "std_msgs/String";
const READY_TIMEOUT: Duration = Duration::from_secs(10);
const SETTLE_TIMEOUT: Duration = Duration::from_secs(5);
const CALL_TIMEOUT: Duration = Duration::from_secs(2);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CaseId {
    Case0,
    Case1,
    Case2,
    Case3,
}

impl CaseId {
    pub const ALL: [CaseId; 4] = [CaseId::Case0, CaseId::Case1, CaseId::Case2, CaseId::Case3];
}

impl fmt::Display for CaseId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CaseId::Case0 => "case0",
            CaseId::Case1 => "case1",
            CaseId::Case2 => "case2",
            CaseId::Case3 => "case3",
        })
    }
}

impl FromStr for CaseId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        CaseId::ALL
            .into_iter()
            .find(|c| c.to_string() == s)
            .ok_or_else(|| format!("unknown case {s:?} (expected case0, case1, case2 or case3)"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    pub description: String,
    pub pass: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioReport {
    pub case_id: CaseId,
    pub steps: Vec<Step>,
    pub recovery_ms: Option<f64>,
}

impl ScenarioReport {
    pub fn passed(&self) -> bool {
        !self.steps.is_empty() && self.steps.iter().all(|s| s.pass)
    }
}

impl fmt::Display for ScenarioReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for s in &self.steps {
            write!(f, "  [{}] {}", if s.pass { "ok" } else { "FAIL" }, s.description)?;
            // long details only matter when something failed
            if !s.detail.is_empty() && (!s.pass || s.detail.len() <= 100) {
                write!(f, ": {}", s.detail)?;
            }
            writeln!(f)?;
        }
        if let Some(ms) = self.recovery_ms {
            writeln!(f, "  recovery_ms={ms:.3}")?;
        }
        write!(f, "{} {}", self.case_id, if self.passed() { "PASS" } else { "FAIL" })
    }
}

/// Where scenarios find the master binary and keep their files.
#[derive(Debug, Clone)]
pub struct ScenarioEnv {
    pub master_bin: PathBuf,
    pub workdir: PathBuf,
}

struct Aborted;
type Flow<T> = Result<T, Aborted>;

struct Run {
    steps: Vec<Step>,
    recovery_ms: Option<f64>,
}

impl Run {
    fn check(&mut self, description: &str, pass: bool, detail: impl Into<String>) -> bool {
        self.steps.push(Step {
            description: description.into(),
            pass,
            detail: detail.into(),
        });
        pass
    }

    fn need<T>(&mut self, description: &str, r: Result<T, String>) -> Flow<T> {
        match r {
            Ok(v) => {
                self.check(description, true, "");
                Ok(v)
            }
            Err(e) => {
                self.check(description, false, e);
                Err(Aborted)
            }
        }
    }

    fn start_master(&mut self, description: &str, launch: &MasterLaunch) -> Flow<MasterProcess> {
        let r = MasterProcess::spawn(launch)
            .map_err(|e| format!("spawn {}: {e}", launch.bin.display()))
            .and_then(|mut m| match m.wait_ready(READY_TIMEOUT) {
                Some(_) => Ok(m),
                None => Err(format!("master not answering after {READY_TIMEOUT:?}; output: {:?}", m.output())),
            });
        self.need(description, r)
    }

    fn spawn_node(&mut self, spec: SimNodeSpec, master: &MasterProcess) -> Flow<SimNode> {
        let description = format!("spawn {}", spec.name);
        let r = SimNode::spawn(spec, master.uri()).map_err(|e| e.to_string());
        self.need(&description, r)
    }
}

fn case_dir(env: &ScenarioEnv, case: &str) -> Result<PathBuf, String> {
    let dir = env.workdir.join(case);
    if dir.exists() {
        std::fs::remove_dir_all(&dir).map_err(|e| format!("clear {}: {e}", dir.display()))?;
    }
    std::fs::create_dir_all(&dir).map_err(|e| format!("create {}: {e}", dir.display()))?;
    Ok(dir)
}

fn launch(env: &ScenarioEnv, port: u16, checkpoint_path: &Path, fault_injection: bool) -> MasterLaunch {
    MasterLaunch {
        rescue: true,
        checkpoint_path: Some(checkpoint_path.to_path_buf()),
        fault_injection,
        ..MasterLaunch::new(&env.master_bin, port)
    }
}

fn call(uri: &str, method: &str, params: &[Value]) -> Result<Value, String> {
    rpc::call_ok(uri, method, params, CALL_TIMEOUT).map_err(|e| format!("{method}: {e}"))
}

/// The encoded `getSystemState` response body.
fn system_state_bytes(uri: &str) -> Result<String, String> {
    let reply = rpc::call(uri, "getSystemState", &[Value::from(MASTER_CALLER_ID)], CALL_TIMEOUT)
        .map_err(|e| format!("getSystemState: {e}"))?;
    Ok(xmlrpc::encode_response(&reply))
}

fn wait_until(timeout: Duration, mut pred: impl FnMut() -> bool) -> bool {
    let deadline = Instant::now() + timeout;
    loop {
        if pred() {
            return true;
        }
        if Instant::now() >= deadline {
            return false;
        }
        std::thread::sleep(Duration::from_millis(5));
    }
}

/// The state a fresh master reaches when only `nodes` register, followed by
/// the given parameters.
pub fn rebuild(nodes: &[&SimNode], params: &[(&str, ParamValue)]) -> MasterState {
    let mut s = MasterState::new();
    for node in nodes {
        let spec = node.spec();
        let name = node.name();
        let name_of = |t: &str| GraphName::new(t).expect("validated spec");
        for t in &spec.publishes {
            s.register_publisher(name, node.api(), &name_of(&t.topic), &t.datatype)
                .expect("validated spec");
        }
        for t in &spec.subscribes {
            s.register_subscriber(name, node.api(), &name_of(&t.topic), &t.datatype)
                .expect("validated spec");
        }
        for svc in &spec.services {
            s.register_service(name, node.api(), &name_of(svc), &node.service_uri());
        }
    }
    for (key, value) in params {
        s.set_param(&ParamKey::new(*key).expect("static key"), value.clone())
            .expect("static param");
    }
    s
}

fn strings(list: &[&EndpointUri]) -> Vec<String> {
    list.iter().map(|u| u.as_str().to_string()).collect()
}

pub fn run_scenario(case: CaseId, env: &ScenarioEnv) -> ScenarioReport {
    let mut run = Run {
        steps: Vec::new(),
        recovery_ms: None,
    };
    let _ = match case {
        CaseId::Case0 => case0(&mut run, env),
        CaseId::Case1 => case1(&mut run, env),
        CaseId::Case2 => case2(&mut run, env),
        CaseId::Case3 => case3(&mut run, env, None),
    };
    ScenarioReport {
        case_id: case,
        steps: run.steps,
        recovery_ms: run.recovery_ms,
    }
}

/// Case 3 with the crash placed after `offset` bytes of the temporary file
/// instead of just before the rename.
pub fn run_case3_at(env: &ScenarioEnv, offset: Option<usize>) -> ScenarioReport {
    let mut run = Run {
        steps: Vec::new(),
        recovery_ms: None,
    };
    let _ = case3(&mut run, env, offset);
    ScenarioReport {
        case_id: CaseId::Case3,
        steps: run.steps,
        recovery_ms: run.recovery_ms,
    }
}

const RATE_KEY: &str = "/demo/rate";

fn set_rate(run: &mut Run, master: &MasterProcess) -> Flow<()> {
    let r = call(master.uri(), "setParam", &[Value::from("/harness"), Value::from(RATE_KEY), Value::Int(10)]);
    run.need("set /demo/rate", r.map(drop))
}

fn crash_and_restart(run: &mut Run, master: &mut MasterProcess, launch: &MasterLaunch) -> Flow<MasterProcess> {
    master.kill();
    run.check("master killed (SIGKILL)", true, format!("pid {}", master.pid()));
    let restarted = run.start_master("master restarted with rescue", launch)?;
    run.recovery_ms = restarted.recovery_ms(SETTLE_TIMEOUT);
    run.check(
        "recovery summary printed",
        run.recovery_ms.is_some(),
        format!("{:?}", restarted.output()),
    );
    Ok(restarted)
}

fn case0(run: &mut Run, env: &ScenarioEnv) -> Flow<()> {
    let dir = run.need("prepare work directory", case_dir(env, "case0"))?;
    let path = dir.join("latest-chkpt.yaml");
    let launch = launch(env, free_port(), &path, false);
    let mut master = run.start_master("start master with rescue", &launch)?;
    let talker = run.spawn_node(SimNodeSpec::publisher("/talker", CHATTER, STRING), &master)?;
    let _listener = run.spawn_node(SimNodeSpec::subscriber("/listener", CHATTER, STRING), &master)?;
    set_rate(run, &master)?;

    let before = run.need("read pre-crash getSystemState", system_state_bytes(master.uri()))?;
    let live = rebuild(&[&talker, &_listener], &[(RATE_KEY, ParamValue::Int(10))]);
    run.need(
        "checkpoint reflects pre-crash state",
        wait_checkpoint(&path, |s| *s == live, SETTLE_TIMEOUT).map(drop),
    )?;

    let master = crash_and_restart(run, &mut master, &launch)?;
    let after = run.need("read recovered getSystemState", system_state_bytes(master.uri()))?;
    run.check("getSystemState identical to pre-crash", before == after, "");
    let rate = call(master.uri(), "getParam", &[Value::from("/harness"), Value::from(RATE_KEY)]);
    run.check("parameters restored", rate == Ok(Value::Int(10)), format!("{rate:?}"));

    let newcomer = run.spawn_node(SimNodeSpec::subscriber("/listener2", CHATTER, STRING), &master)?;
    let peers = newcomer.peers(CHATTER).unwrap_or_default();
    run.check(
        "new subscriber receives the pre-crash publisher",
        peers == strings(&[talker.api()]),
        format!("{peers:?}"),
    );
    Ok(())
}

fn case1(run: &mut Run, env: &ScenarioEnv) -> Flow<()> {
    let dir = run.need("prepare work directory", case_dir(env, "case1"))?;
    let path = dir.join("latest-chkpt.yaml");
    let launch = launch(env, free_port(), &path, false);
    let mut master = run.start_master("start master with rescue", &launch)?;
    let talker = run.spawn_node(SimNodeSpec::publisher("/talker", CHATTER, STRING), &master)?;
    let mut listener = run.spawn_node(SimNodeSpec::subscriber("/listener", CHATTER, STRING), &master)?;
    let other = run.spawn_node(SimNodeSpec::subscriber("/listener_b", CHATTER, STRING), &master)?;
    let mut adder_spec = SimNodeSpec::publisher("/adder", "/sum", "std_msgs/Int32");
    adder_spec.services.push("/add_two_ints".into());
    let adder = run.spawn_node(adder_spec, &master)?;
    set_rate(run, &master)?;
    let params = [(RATE_KEY, ParamValue::Int(10))];
    let everyone = rebuild(&[&talker, &listener, &other, &adder], &params);
    run.need(
        "checkpoint reflects pre-crash state",
        wait_checkpoint(&path, |s| *s == everyone, SETTLE_TIMEOUT).map(drop),
    )?;

    master.kill();
    run.check("master killed (SIGKILL)", true, "");
    listener.kill();
    run.check("/listener killed while the master is down", true, "");
    let restarted = run.start_master("master restarted with rescue", &launch)?;
    run.recovery_ms = restarted.recovery_ms(SETTLE_TIMEOUT);

    let oracle = rebuild(&[&talker, &other, &adder], &params);
    let recovered = wait_checkpoint(&path, |s| *s == oracle, SETTLE_TIMEOUT);
    run.check(
        "recovered state equals rebuild from live nodes",
        recovered.is_ok(),
        recovered.err().unwrap_or_default(),
    );
    let expected = xmlrpc::encode_response(&Value::Array(vec![
        Value::Int(1),
        Value::from("current system state"),
        crate::endpoint::system_state_value(&oracle.system_state()),
    ]));
    let live = system_state_bytes(restarted.uri());
    run.check("getSystemState matches the oracle", live.as_ref() == Ok(&expected), "");
    let gone = rpc::call(
        restarted.uri(),
        "lookupNode",
        &[Value::from("/harness"), Value::from("/listener")],
        CALL_TIMEOUT,
    )
    .ok()
    .and_then(|v| rpc::split_triple(v).ok());
    run.check(
        "lookupNode /listener is not found",
        gone.as_ref().is_some_and(|(code, _, _)| *code == -1),
        format!("{gone:?}"),
    );
    let service = call(restarted.uri(), "lookupService", &[Value::from("/harness"), Value::from("/add_two_ints")]);
    run.check(
        "service registration survives",
        service == Ok(Value::from(adder.service_uri().as_str())),
        format!("{service:?}"),
    );
    Ok(())
}

fn last_peers(node: &SimNode, topic: &str) -> Vec<String> {
    node.recorded_updates()
        .iter()
        .rev()
        .find(|u| u.topic == topic)
        .map(|u| u.publishers.clone())
        .unwrap_or_default()
}

fn case2(run: &mut Run, env: &ScenarioEnv) -> Flow<()> {
    let dir = run.need("prepare work directory", case_dir(env, "case2"))?;
    let path = dir.join("latest-chkpt.yaml");
    let mut launch = launch(env, free_port(), &path, true);
    let mut master = run.start_master("start master with rescue and crash injection", &launch)?;
    let listener = run.spawn_node(SimNodeSpec::subscriber("/listener", CHATTER, STRING), &master)?;
    let talker_a = run.spawn_node(SimNodeSpec::publisher("/talker_a", CHATTER, STRING), &master)?;
    let talker_b = run.spawn_node(SimNodeSpec::publisher("/talker_b", CHATTER, STRING), &master)?;
    let both = strings(&[talker_a.api(), talker_b.api()]);
    let notified = wait_until(SETTLE_TIMEOUT, || last_peers(&listener, CHATTER) == both);
    run.check("listener learns both publishers", notified, format!("{:?}", listener.recorded_updates()))
        .then_some(())
        .ok_or(Aborted)?;

    let armed = call(master.uri(), "injectCrash", &[Value::from("/harness"), Value::from("before-notify")]);
    run.need("arm crash between commit and notification", armed.map(drop))?;
    let reply = talker_b.unregister_publisher(master.uri(), CHATTER);
    run.check("unregisterPublisher gets no reply", reply.is_err(), format!("{reply:?}"));
    let status = master.wait_exit(SETTLE_TIMEOUT);
    run.check(
        "master crashed at the injected point",
        status.and_then(|s| s.code()) == Some(CRASH_EXIT_CODE),
        format!("{status:?}"),
    );
    run.check(
        "listener was not notified before the crash",
        last_peers(&listener, CHATTER) == both,
        format!("{:?}", listener.recorded_updates()),
    );
    let committed = checkpoint::load(&path);
    let unregistered = matches!(&committed, Ok(Some(s)) if s.node(talker_b.name()).is_none());
    run.check("checkpoint holds the unregistration", unregistered, format!("{committed:?}"));

    launch.fault_injection = false;
    let restarted = run.start_master("master restarted with rescue", &launch)?;
    run.recovery_ms = restarted.recovery_ms(SETTLE_TIMEOUT);
    let only_a = strings(&[talker_a.api()]);
    let caught_up = wait_until(SETTLE_TIMEOUT, || last_peers(&listener, CHATTER) == only_a);
    run.check(
        "listener's latest update excludes the unregistered publisher",
        caught_up,
        format!("{:?}", listener.recorded_updates()),
    );
    Ok(())
}

fn case3(run: &mut Run, env: &ScenarioEnv, offset: Option<usize>) -> Flow<()> {
    let dir = run.need("prepare work directory", case_dir(env, "case3"))?;
    let path = dir.join("latest-chkpt.yaml");
    let mut launch = launch(env, free_port(), &path, true);
    let mut master = run.start_master("start master with rescue and crash injection", &launch)?;
    let talker = run.spawn_node(SimNodeSpec::publisher("/talker", CHATTER, STRING), &master)?;
    let listener = run.spawn_node(SimNodeSpec::subscriber("/listener", CHATTER, STRING), &master)?;
    let expected = rebuild(&[&talker, &listener], &[]);
    let committed = run.need(
        "checkpoint reflects current state",
        wait_checkpoint(&path, |s| *s == expected, SETTLE_TIMEOUT),
    )?;

    let mut args = vec![Value::from("/harness"), Value::from("during-checkpoint-write")];
    if let Some(offset) = offset {
        args.push(Value::Int(offset as i32));
    }
    run.need("arm crash inside the next commit", call(master.uri(), "injectCrash", &args).map(drop))?;
    let reply = call(master.uri(), "setParam", &[Value::from("/harness"), Value::from("/case3/x"), Value::Int(1)]);
    let status = master.wait_exit(SETTLE_TIMEOUT);
    run.check(
        "master crashed while writing the checkpoint",
        status.and_then(|s| s.code()) == Some(CRASH_EXIT_CODE),
        format!("{status:?}, setParam reply {reply:?}"),
    );
    let tmp = checkpoint::temp_path(&path);
    run.check("temporary file left behind", tmp.exists(), tmp.display().to_string());
    let on_disk = checkpoint::load(&path);
    run.check(
        "final checkpoint parses and equals the last committed state",
        matches!(&on_disk, Ok(Some(s)) if *s == committed),
        format!("{on_disk:?}"),
    );

    launch.fault_injection = false;
    let restarted = run.start_master("master restarted with rescue", &launch)?;
    run.recovery_ms = restarted.recovery_ms(SETTLE_TIMEOUT);
    let recovered = wait_checkpoint(&path, |s| *s == committed, SETTLE_TIMEOUT);
    run.check("recovery adopts the last committed state", recovered.is_ok(), recovered.err().unwrap_or_default());
    let has = call(restarted.uri(), "hasParam", &[Value::from("/harness"), Value::from("/case3/x")]);
    run.check("the interrupted change is absent", has == Ok(Value::Bool(false)), format!("{has:?}"));
    Ok(())
}
