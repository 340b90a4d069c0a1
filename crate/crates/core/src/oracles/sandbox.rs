//! Runs generated Python scorers in a resource-limited child process.

use std::io::{Read, Write};
use std::os::unix::process::CommandExt;
use std::process::{Command, Stdio};
use std::thread;
use std::time::{Duration, Instant};

use super::scorer::{ScoreError, ScorerRuntime};

const MAX_OUTPUT_BYTES: usize = 256 * 1024;

const HARNESS: &str = r#"
import builtins, json, sys, types

def _no_network(*a, **k):
    raise OSError("network access is disabled in the scorer sandbox")
try:
    import socket
    socket.socket = _no_network
    socket.create_connection = _no_network
except Exception:
    pass

def get_function_name_to_callable(func_string):
    scope = {}
    exec(func_string, scope)
    return {k: v for k, v in scope.items() if callable(v) and not k.startswith("__")}

def eval_with_llm_judge(instructions, submission, criteria=None):
    raise RuntimeError("eval_with_llm_judge is not available inside the sandbox; use an llm_judge scorer")

helper = types.ModuleType("sandbox_eval_helper")
helper.get_function_name_to_callable = get_function_name_to_callable
helper.eval_with_llm_judge = eval_with_llm_judge
sys.modules["sandbox_eval_helper"] = helper

payload = json.loads(sys.stdin.read())
out = sys.__stdout__
sys.stdout = sys.stderr
try:
    scope = {"__name__": "task_family"}
    exec(compile(payload["program"], "<task_family>", "exec"), scope)
    family = scope["TaskFamily"]
    tasks = family.get_tasks()
    t = tasks[payload["task_key"]]
    value = family.score(t, payload["submission"])
    if value is None:
        value = 0.0
    out.write(json.dumps({"score": float(value)}) + "\n")
except BaseException as exc:
    out.write(json.dumps({"error": "%s: %s" % (type(exc).__name__, exc)}) + "\n")
out.flush()
"#;

fn apply_limits(runtime: &ScorerRuntime) -> impl FnMut() -> std::io::Result<()> {
    let cpu = runtime.cpu_secs.max(1) as libc::rlim_t;
    let mem = (runtime.memory_mb.max(64) * 1024 * 1024) as libc::rlim_t;
    move || {
        // SAFETY: only async-signal-safe libc calls between fork and exec.
        unsafe {
            let cpu_lim = libc::rlimit {
                rlim_cur: cpu,
                rlim_max: cpu,
            };
            libc::setrlimit(libc::RLIMIT_CPU, &cpu_lim);
            let mem_lim = libc::rlimit {
                rlim_cur: mem,
                rlim_max: mem,
            };
            libc::setrlimit(libc::RLIMIT_AS, &mem_lim);
            let no_files = libc::rlimit {
                rlim_cur: 0,
                rlim_max: 0,
            };
            libc::setrlimit(libc::RLIMIT_FSIZE, &no_files);
            libc::setrlimit(libc::RLIMIT_CORE, &no_files);
            #[cfg(target_os = "linux")]
            {
                // Best effort: a fresh network namespace has no interfaces.
                if libc::unshare(libc::CLONE_NEWNET) != 0 {
                    libc::unshare(libc::CLONE_NEWUSER | libc::CLONE_NEWNET);
                }
            }
        }
        Ok(())
    }
}

fn read_capped<R: Read + Send + 'static>(mut r: R) -> thread::JoinHandle<Vec<u8>> {
    thread::spawn(move || {
        let mut buf = Vec::new();
        let mut chunk = [0u8; 8192];
        while let Ok(n) = r.read(&mut chunk) {
            if n == 0 {
                break;
            }
            if buf.len() < MAX_OUTPUT_BYTES {
                buf.extend_from_slice(&chunk[..n.min(MAX_OUTPUT_BYTES - buf.len())]);
            }
        }
        buf
    })
}

pub(crate) fn run_task_family(
    program: &str,
    task_key: &str,
    submission: &str,
    runtime: &ScorerRuntime,
) -> Result<f64, ScoreError> {
    let payload = serde_json::json!({
        "program": program,
        "task_key": task_key,
        "submission": submission,
    })
    .to_string();
    let mut cmd = Command::new(&runtime.python);
    cmd.args(["-I", "-c", HARNESS])
        .env_clear()
        .env("PATH", "/usr/local/bin:/usr/bin:/bin")
        .env("PYTHONDONTWRITEBYTECODE", "1")
        .current_dir(std::env::temp_dir())
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped());
    // SAFETY: the closure only calls setrlimit/unshare.
    unsafe {
        cmd.pre_exec(apply_limits(runtime));
    }
    let mut child = cmd
        .spawn()
        .map_err(|e| ScoreError::SandboxFailure(format!("cannot start {}: {e}", runtime.python)))?;
    let stdout = read_capped(child.stdout.take().expect("piped stdout"));
    let stderr = read_capped(child.stderr.take().expect("piped stderr"));
    {
        let mut stdin = child.stdin.take().expect("piped stdin");
        if let Err(e) = stdin.write_all(payload.as_bytes()) {
            let _ = child.kill();
            let _ = child.wait();
            return Err(ScoreError::SandboxFailure(format!("cannot write to scorer: {e}")));
        }
    }
    let deadline = Instant::now() + runtime.wall_clock();
    let status = loop {
        match child.try_wait() {
            Ok(Some(status)) => break status,
            Ok(None) if Instant::now() >= deadline => {
                let _ = child.kill();
                let _ = child.wait();
                return Err(ScoreError::ScorerFault(format!(
                    "scorer exceeded wall-clock limit of {:?}",
                    runtime.wall_clock()
                )));
            }
            Ok(None) => thread::sleep(Duration::from_millis(5)),
            Err(e) => return Err(ScoreError::SandboxFailure(e.to_string())),
        }
    };
    let out = String::from_utf8_lossy(&stdout.join().unwrap_or_default()).into_owned();
    let err = String::from_utf8_lossy(&stderr.join().unwrap_or_default()).into_owned();
    let last = out.lines().rev().find(|l| !l.trim().is_empty());
    let parsed: Option<serde_json::Value> = last.and_then(|l| serde_json::from_str(l).ok());
    match parsed {
        Some(v) if v.get("score").is_some() => {
            let s = v["score"].as_f64().unwrap_or(0.0);
            Ok(if s == 1.0 { 1.0 } else { 0.0 })
        }
        Some(v) if v.get("error").is_some() => Err(ScoreError::ScorerFault(
            v["error"].as_str().unwrap_or("unknown error").to_string(),
        )),
        _ => Err(ScoreError::ScorerFault(format!(
            "scorer exited with {status} without a result: {}",
            err.lines().last().unwrap_or("")
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn python_available() -> bool {
        Command::new("python3").arg("--version").output().is_ok()
    }

    const FAMILY: &str = r#"
class TaskFamily:
    @staticmethod
    def get_tasks():
        return {"1": {"answer": "C"}, "2": {"answer": "D"}}

    @staticmethod
    def get_instructions(t):
        return "Pick a letter."

    @staticmethod
    def score(t, submission):
        return 1.0 if t["answer"].lower() == submission.lower().strip() else 0.0
"#;

    #[test]
    fn scores_a_task_family() {
        if !python_available() {
            return;
        }
        let rt = ScorerRuntime::default();
        assert_eq!(run_task_family(FAMILY, "1", "c ", &rt).unwrap(), 1.0);
        assert_eq!(run_task_family(FAMILY, "2", "c", &rt).unwrap(), 0.0);
    }

    #[test]
    fn syntax_error_is_a_scorer_fault() {
        if !python_available() {
            return;
        }
        let err = run_task_family("class TaskFamily(:\n", "1", "x", &ScorerRuntime::default())
            .unwrap_err();
        assert!(matches!(err, ScoreError::ScorerFault(ref m) if m.contains("SyntaxError")), "{err:?}");
    }

    #[test]
    fn runaway_scorer_is_killed() {
        if !python_available() {
            return;
        }
        let program = "class TaskFamily:\n    @staticmethod\n    def get_tasks():\n        while True: pass\n";
        let rt = ScorerRuntime {
            wall_clock_secs: 0.5,
            cpu_secs: 1,
            ..Default::default()
        };
        let start = Instant::now();
        let err = run_task_family(program, "1", "x", &rt).unwrap_err();
        assert!(matches!(err, ScoreError::ScorerFault(_)));
        assert!(start.elapsed() < Duration::from_secs(5));
    }

    #[test]
    fn network_is_unavailable() {
        if !python_available() {
            return;
        }
        let program = r#"
class TaskFamily:
    @staticmethod
    def get_tasks():
        return {"1": {}}
    @staticmethod
    def score(t, submission):
        import socket
        socket.create_connection(("example.com", 80), timeout=1)
        return 1.0
"#;
        let err = run_task_family(program, "1", "x", &ScorerRuntime::default()).unwrap_err();
        assert!(matches!(err, ScoreError::ScorerFault(_)), "{err:?}");
    }

    #[test]
    fn missing_interpreter_is_infrastructure() {
        let rt = ScorerRuntime {
            python: "/nonexistent/python".into(),
            ..Default::default()
        };
        assert!(matches!(
            run_task_family(FAMILY, "1", "c", &rt),
            Err(ScoreError::SandboxFailure(_))
        ));
    }
}
