//! Resolution of run settings from defaults, a key=value config file and
//! command-line flags, in increasing order of precedence.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::Args;
use metaband::{ExperimentConfig, GroupFilter, PolicyKind, RankMode, SyntheticSpec};

/// Flags shared by every subcommand. Values are kept as text so that flags
/// and config-file entries go through the same parser.
#[derive(Debug, Default, Clone, Args)]
pub struct Flags {
    /// Flat `key = value` file; flags given on the command line win.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Context dimension d (synthetic).
    #[arg(long, value_name = "N")]
    pub d: Option<String>,
    /// Rank of the true task subspace (synthetic).
    #[arg(long, value_name = "N")]
    pub p_true: Option<String>,
    /// Task variance off the true subspace (synthetic).
    #[arg(long, value_name = "X")]
    pub var_rho: Option<String>,
    /// Number of tasks T.
    #[arg(long, value_name = "N")]
    pub tasks: Option<String>,
    /// Rounds per task n.
    #[arg(long, value_name = "N")]
    pub rounds: Option<String>,
    /// Arms offered per round K.
    #[arg(long, value_name = "N")]
    pub arms: Option<String>,
    /// Comma-separated policies: p-linucb, p-ts, linucb, ts, b-oful, oracle-ucb, oracle-ts, or all.
    #[arg(long, value_name = "LIST")]
    pub policy: Option<String>,
    #[arg(long, value_name = "X")]
    pub lambda1: Option<String>,
    #[arg(long, value_name = "X")]
    pub lambda2: Option<String>,
    /// Ridge parameter of the classic baselines and of the per-task estimate.
    #[arg(long, value_name = "X")]
    pub lambda: Option<String>,
    #[arg(long, value_name = "X")]
    pub delta: Option<String>,
    /// TS tail parameter α.
    #[arg(long, value_name = "X")]
    pub alpha: Option<String>,
    /// Bound V on the task parameter norm.
    #[arg(long, value_name = "X")]
    pub v_bound: Option<String>,
    /// Value used for the unobservable residual W (capped at 2V).
    #[arg(long, value_name = "X")]
    pub w_bound: Option<String>,
    /// Multiplier on the UCB radius and the TS posterior scale.
    #[arg(long, value_name = "X")]
    pub exploration_scale: Option<String>,
    /// Fixed TS posterior scale v.
    #[arg(long, value_name = "X")]
    pub posterior_scale: Option<String>,
    /// Reward noise standard deviation (synthetic).
    #[arg(long, value_name = "X")]
    pub noise_std: Option<String>,
    /// Seeds as a comma list of values and half-open ranges, e.g. `0..10,42`.
    #[arg(long, value_name = "LIST")]
    pub seeds: Option<String>,
    /// `auto` (largest eigengap) or a fixed rank `p`.
    #[arg(long, value_name = "MODE")]
    pub rank_mode: Option<String>,
    /// Tasks run without meta-knowledge before projections are used.
    #[arg(long, value_name = "N")]
    pub init_tasks: Option<String>,
    /// Held-out task draws per point of the W-error curve.
    #[arg(long, value_name = "N")]
    pub held_out: Option<String>,
    /// q values for the rank sweep; defaults to 0..d.
    #[arg(long, value_name = "LIST")]
    pub q_values: Option<String>,
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// MovieLens ml-1m directory; falls back to MOVIELENS_PATH.
    #[arg(long, value_name = "DIR")]
    pub data_path: Option<PathBuf>,
    /// User group: all, gender:M, gender:F or occupation:N.
    #[arg(long, value_name = "GROUP")]
    pub group: Option<String>,
}

const KEYS: [&str; 27] = [
    "d",
    "p-true",
    "var-rho",
    "tasks",
    "rounds",
    "arms",
    "policy",
    "lambda1",
    "lambda2",
    "lambda",
    "delta",
    "alpha",
    "v-bound",
    "w-bound",
    "exploration-scale",
    "posterior-scale",
    "noise-std",
    "seeds",
    "rank-mode",
    "init-tasks",
    "held-out",
    "q-values",
    "out",
    "data-path",
    "group",
    "subspace-seed",
    "context-seed",
];

impl Flags {
    fn entries(&self) -> BTreeMap<&'static str, String> {
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string());
        let pairs = [
            ("d", self.d.clone()),
            ("p-true", self.p_true.clone()),
            ("var-rho", self.var_rho.clone()),
            ("tasks", self.tasks.clone()),
            ("rounds", self.rounds.clone()),
            ("arms", self.arms.clone()),
            ("policy", self.policy.clone()),
            ("lambda1", self.lambda1.clone()),
            ("lambda2", self.lambda2.clone()),
            ("lambda", self.lambda.clone()),
            ("delta", self.delta.clone()),
            ("alpha", self.alpha.clone()),
            ("v-bound", self.v_bound.clone()),
            ("w-bound", self.w_bound.clone()),
            ("exploration-scale", self.exploration_scale.clone()),
            ("posterior-scale", self.posterior_scale.clone()),
            ("noise-std", self.noise_std.clone()),
            ("seeds", self.seeds.clone()),
            ("rank-mode", self.rank_mode.clone()),
            ("init-tasks", self.init_tasks.clone()),
            ("held-out", self.held_out.clone()),
            ("q-values", self.q_values.clone()),
            ("out", path(&self.out)),
            ("data-path", path(&self.data_path)),
            ("group", self.group.clone()),
        ];
        pairs.into_iter().filter_map(|(k, v)| v.map(|v| (k, v))).collect()
    }
}

/// Parses a config file: one `key = value` per line, `#` comments, keys
/// spelled like the long flags (underscores are accepted for dashes).
pub fn parse_config(text: &str, origin: &Path) -> Result<BTreeMap<&'static str, String>, String> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| format!("{}:{}: expected key = value", origin.display(), i + 1))?;
        let key = k.trim().trim_start_matches("--").replace('_', "-");
        let key = KEYS
            .iter()
            .find(|&&known| known == key)
            .ok_or_else(|| format!("{}:{}: unknown key {key:?}", origin.display(), i + 1))?;
        out.insert(*key, v.trim().to_string());
    }
    Ok(out)
}

/// Fully resolved settings for one invocation.
#[derive(Debug, Clone)]
pub struct Settings {
    pub spec: SyntheticSpec,
    pub policies: Vec<PolicyKind>,
    /// Policy-independent experiment config; `policy` is a placeholder.
    pub experiment: ExperimentConfig,
    pub held_out: usize,
    pub q_values: Option<Vec<usize>>,
    pub out: PathBuf,
    pub data_path: Option<PathBuf>,
    pub group: GroupFilter,
}

/// Seeds as `a,b,c..d`, ranges half-open.
pub fn parse_seeds(s: &str) -> Result<Vec<u64>, String> {
    parse_list(s).map_err(|_| format!("bad seed list {s:?}"))
}

fn parse_list<T>(s: &str) -> Result<Vec<T>, ()>
where
    T: std::str::FromStr + Copy + PartialOrd + Into<u64> + TryFrom<u64>,
{
    let mut out = Vec::new();
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        match part.split_once("..") {
            Some((a, b)) => {
                let a: T = a.trim().parse().map_err(|_| ())?;
                let b: T = b.trim().parse().map_err(|_| ())?;
                for v in a.into()..b.into() {
                    out.push(T::try_from(v).map_err(|_| ())?);
                }
            }
            None => out.push(part.parse().map_err(|_| ())?),
        }
    }
    if out.is_empty() {
        return Err(());
    }
    Ok(out)
}

fn parse_policies(s: &str) -> Result<Vec<PolicyKind>, String> {
    if s.trim().eq_ignore_ascii_case("all") {
        return Ok(PolicyKind::ALL.to_vec());
    }
    let kinds: Vec<PolicyKind> = s
        .split(',')
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .map(|p| p.parse().map_err(|e: metaband::Error| e.to_string()))
        .collect::<Result<_, _>>()?;
    if kinds.is_empty() {
        return Err("empty policy list".into());
    }
    Ok(kinds)
}

struct Lookup {
    values: BTreeMap<&'static str, String>,
}

impl Lookup {
    fn get<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>, String> {
        match self.values.get(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|_| format!("invalid value {v:?} for {key}")),
        }
    }

    fn raw(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }
}

impl Settings {
    /// Merges the config file (if any) under the flags and fills the rest
    /// from defaults. `dim_override` pins `d` for data-driven environments.
    pub fn resolve(flags: &Flags, dim_override: Option<usize>) -> Result<Self, String> {
        let mut values = match &flags.config {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
                parse_config(&text, path)?
            }
            None => BTreeMap::new(),
        };
        values.extend(flags.entries());
        let v = Lookup { values };

        let defaults = SyntheticSpec::default();
        let dim = match dim_override {
            Some(d) => d,
            None => v.get("d")?.unwrap_or(defaults.dim),
        };
        let spec = SyntheticSpec {
            dim,
            true_rank: v.get("p-true")?.unwrap_or(defaults.true_rank.min(dim)),
            task_variance: v.get("var-rho")?.unwrap_or(defaults.task_variance),
            param_scale: v.get("v-bound")?.unwrap_or(defaults.param_scale),
            arms_per_round: v.get("arms")?.unwrap_or(defaults.arms_per_round),
            noise_std: v.get("noise-std")?.unwrap_or(defaults.noise_std),
            context_cov_seed: v.get("context-seed")?.unwrap_or(defaults.context_cov_seed),
            subspace_seed: v.get("subspace-seed")?.unwrap_or(defaults.subspace_seed),
        };
        let policies = parse_policies(v.raw("policy").unwrap_or("p-linucb"))?;
        let tasks = v.get("tasks")?.unwrap_or(100);
        let rounds = v.get("rounds")?.unwrap_or(250);
        let mut experiment = ExperimentConfig::new(policies[0], dim, tasks, rounds, spec.param_scale);
        let pc = &mut experiment.policy_config;
        if let Some(x) = v.get("lambda2")? {
            pc.lambda2 = x;
        }
        if let Some(x) = v.get("lambda1")? {
            pc.lambda1 = x;
        }
        if let Some(x) = v.get("lambda")? {
            pc.lambda_ridge = x;
        }
        if let Some(x) = v.get("delta")? {
            pc.delta = x;
        }
        if let Some(x) = v.get("alpha")? {
            pc.alpha = x;
        }
        if let Some(x) = v.get("w-bound")? {
            pc.w_bound = x;
        }
        if let Some(x) = v.get("exploration-scale")? {
            pc.exploration_scale = x;
        }
        pc.posterior_scale = v.get("posterior-scale")?;
        if let Some(s) = v.raw("seeds") {
            experiment.seeds = parse_seeds(s)?;
        }
        if let Some(s) = v.raw("rank-mode") {
            experiment.rank_mode = s.parse::<RankMode>().map_err(|e| e.to_string())?;
        }
        experiment.init_tasks = v.get("init-tasks")?;
        experiment.validate(dim).map_err(|e| e.to_string())?;

        let q_values = match v.raw("q-values") {
            Some(s) => Some(
                parse_list::<u32>(s)
                    .map_err(|_| format!("bad q list {s:?}"))?
                    .into_iter()
                    .map(|q| q as usize)
                    .collect(),
            ),
            None => None,
        };
        let group = match v.raw("group") {
            Some(g) => g.parse().map_err(|e: metaband::Error| e.to_string())?,
            None => GroupFilter::All,
        };
        Ok(Self {
            spec,
            policies,
            experiment,
            held_out: v.get("held-out")?.unwrap_or(200),
            q_values,
            out: v.get("out")?.unwrap_or_else(|| PathBuf::from(".")),
            data_path: v
                .get("data-path")?
                .or_else(|| std::env::var_os("MOVIELENS_PATH").map(PathBuf::from)),
            group,
        })
    }

    pub fn for_policy(&self, policy: PolicyKind) -> ExperimentConfig {
        self.experiment.clone().with_policy(policy)
    }
}
