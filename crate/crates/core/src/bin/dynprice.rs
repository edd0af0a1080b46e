use std::collections::BTreeSet;
use std::error::Error;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use dynprice::dual::{refine_covering, refine_covering_traced, tight_subgraph};
use dynprice::generate::generate_instance;
use dynprice::io::{parse_instance, MarketJson};
use dynprice::matching::{max_weight_bmatching, optimal_covering};
use dynprice::model::{check_opt_property, trim_items};
use dynprice::ordering::{adequate_bidemand_traced, verify_adequate, ItemOrdering};
use dynprice::pricing::{price_round, OrderingPolicy, PricingMode};
use dynprice::sets::{feasible_bundle, maximal_dangerous_set, minimal_dangerous_disjoint};
use dynprice::simulation::{combinations, run_exhaustive, run_random_orders, SimConfig};
use dynprice::{BipartiteGraph, Covering, Market};

#[derive(Parser)]
#[command(
    name = "dynprice",
    version,
    about = "Optimal dynamic pricing for multi-demand markets"
)]
struct Cli {
    /// Pretty-print the JSON output.
    #[arg(long, global = true)]
    pretty: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Unit,
    Multi,
}

#[derive(Clone, Copy, ValueEnum)]
enum Policy {
    Auto,
    ThreeBuyer,
    BiDemand,
    Reversed,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
}

#[derive(Subcommand)]
enum Command {
    /// Maximum welfare allocation and an optimal dual.
    Solve {
        #[arg(long)]
        input: PathBuf,
    },
    /// Refined dual: tight edges are exactly the edges of optimal allocations.
    Dual {
        #[arg(long)]
        input: PathBuf,
        /// Include every perturbation step with its re-solved values.
        #[arg(long)]
        trace: bool,
    },
    /// Adequate item ordering of the tight graph.
    Order {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum, default_value = "auto")]
        policy: Policy,
    },
    /// Prices for the next arriving buyer.
    Price {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum, default_value = "multi")]
        mode: Mode,
        #[arg(long, value_enum, default_value = "auto")]
        policy: Policy,
    },
    /// Replays arrival orders and tie-breaks and checks the final welfare.
    Simulate {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum, default_value = "multi")]
        mode: Mode,
        #[arg(long, value_enum, default_value = "auto")]
        policy: Policy,
        /// Explore every order and tie-break (the default).
        #[arg(long, conflicts_with = "orders")]
        exhaustive: bool,
        /// Check this many random orders instead.
        #[arg(long)]
        orders: Option<u64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Maximum number of residual markets priced.
        #[arg(long, default_value_t = 200_000)]
        budget: usize,
        #[arg(long, value_enum, default_value = "json")]
        format: Format,
    },
    /// Random market with as many items as total demand.
    Generate {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Comma-separated demands, one per buyer.
        #[arg(long, value_delimiter = ',', required = true)]
        demands: Vec<u32>,
        #[arg(long, default_value_t = 1)]
        min_value: u64,
        #[arg(long, default_value_t = 20)]
        max_value: u64,
    },
    /// Checks the optimality property, dangerous sets, bundle feasibility and
    /// ordering adequacy.
    Verify {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum, default_value = "auto")]
        policy: Policy,
    },
}

impl From<Mode> for PricingMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Unit => PricingMode::Unit,
            Mode::Multi => PricingMode::Multi,
        }
    }
}

impl From<Policy> for OrderingPolicy {
    fn from(p: Policy) -> Self {
        match p {
            Policy::Auto => OrderingPolicy::Auto,
            Policy::ThreeBuyer => OrderingPolicy::ThreeBuyer,
            Policy::BiDemand => OrderingPolicy::BiDemand,
            Policy::Reversed => OrderingPolicy::Reversed,
        }
    }
}

type Outcome = Result<(Value, bool), Box<dyn Error>>;

fn load(path: &PathBuf) -> Result<Market, Box<dyn Error>> {
    let bytes = std::fs::read(path).map_err(|e| format!("{}: {e}", path.display()))?;
    Ok(parse_instance(&bytes)?)
}

fn covering_json(g: &BipartiteGraph, pi: &Covering) -> Value {
    let items: serde_json::Map<String, Value> = g
        .items()
        .iter()
        .zip(&pi.item)
        .map(|(s, v)| (s.to_string(), json!(v)))
        .collect();
    let buyers: serde_json::Map<String, Value> = g
        .buyers()
        .iter()
        .zip(&pi.buyer)
        .map(|(t, v)| (t.to_string(), json!(v)))
        .collect();
    json!({ "items": items, "buyers": buyers })
}

fn edge_json(g: &BipartiteGraph, e: usize) -> Value {
    let edge = g.edge(e);
    json!([g.items()[edge.item], g.buyers()[edge.buyer]])
}

fn solve(m: &Market) -> Outcome {
    let g = BipartiteGraph::from_market(m);
    let (matching, welfare) = max_weight_bmatching(&g);
    let pi = optimal_covering(&g);
    Ok((
        json!({
            "welfare": welfare,
            "allocation": g.allocation(&matching),
            "pi": covering_json(&g, &pi),
            "dual_value": pi.value(&g),
        }),
        true,
    ))
}

fn dual(m: &Market, trace: bool) -> Outcome {
    let g = BipartiteGraph::from_market(m);
    let (sc, steps) = if trace {
        let (sc, steps) = refine_covering_traced(&g)?;
        (sc, Some(steps))
    } else {
        (refine_covering(&g)?, None)
    };
    let mut out = json!({
        "pi": covering_json(&g, &sc.pi),
        "tight_edges": sc.tight_edges.iter().map(|&e| edge_json(&g, e)).collect::<Vec<_>>(),
        "slack": sc.slack,
    });
    if let Some(steps) = steps {
        out["trace"] = json!(steps);
    }
    Ok((out, true))
}

fn tight_graph(m: &Market) -> Result<BipartiteGraph, Box<dyn Error>> {
    let (trimmed, _) = trim_items(m);
    let g = BipartiteGraph::from_market(&trimmed);
    let sc = refine_covering(&g)?;
    Ok(tight_subgraph(&sc, &g))
}

fn order(m: &Market, policy: Policy) -> Outcome {
    let h = tight_graph(m)?;
    let round = price_round(m, PricingMode::Multi, policy.into())?;
    let sigma = round.sigma.expect("multi-demand rounds carry an ordering");
    let mut out = json!({
        "sigma": sigma,
        "adequate": verify_adequate(&h, &sigma)?,
    });
    if h.capacities().iter().all(|&b| b <= 2) {
        let (_, trace) = adequate_bidemand_traced(&h)?;
        out["case_trace"] = json!(trace);
    }
    Ok((out, true))
}

fn price(m: &Market, mode: Mode, policy: Policy) -> Outcome {
    let round = price_round(m, mode.into(), policy.into())?;
    Ok((
        json!({
            "prices": round.prices.price,
            "blocked": round.prices.blocked,
            "pi": { "items": round.pi_items, "buyers": round.pi_buyers },
            "sigma": round.sigma,
            "delta": round.prices.delta,
            "slack": round.slack,
        }),
        true,
    ))
}

fn verify(m: &Market, policy: Policy) -> Outcome {
    let report = check_opt_property(m);
    let h = tight_graph(m)?;
    let mut out = json!({
        "opt_welfare": report.opt_welfare,
        "opt_property": report.opt_property_holds,
        "witness": report.witness,
    });
    let mut ok = report.opt_property_holds;

    if h.capacities().iter().all(|&b| b <= 2) {
        let z = maximal_dangerous_set(&h)?;
        let disjoint = z.as_ref().and_then(|z| minimal_dangerous_disjoint(&h, z));
        let names = |set: &Option<Vec<usize>>| {
            set.as_ref()
                .map(|s| s.iter().map(|&t| h.buyers()[t].clone()).collect::<Vec<_>>())
        };
        out["maximal_dangerous_set"] = json!(names(&z));
        out["minimal_dangerous_disjoint"] = json!(names(&disjoint));
    }

    let mut table = Vec::new();
    for t in 0..h.n_buyers() {
        let nbrs = h.neighbors(t);
        for bundle in combinations(&nbrs, (h.capacity(t) as usize).min(nbrs.len())) {
            let set: BTreeSet<usize> = bundle.iter().copied().collect();
            table.push(json!({
                "buyer": h.buyers()[t],
                "bundle": bundle.iter().map(|&s| &h.items()[s]).collect::<Vec<_>>(),
                "feasible": feasible_bundle(&h, t, &set)?,
            }));
        }
    }
    out["feasibility"] = json!(table);

    if ok {
        let round = price_round(m, PricingMode::Multi, policy.into())?;
        let sigma: ItemOrdering = round.sigma.expect("multi-demand rounds carry an ordering");
        let adequate = verify_adequate(&h, &sigma)?;
        out["sigma"] = json!(sigma);
        out["adequate"] = json!(adequate);
        ok &= adequate;
    }
    Ok((out, ok))
}

fn run(cli: Cli) -> Outcome {
    match cli.command {
        Command::Solve { input } => solve(&load(&input)?),
        Command::Dual { input, trace } => dual(&load(&input)?, trace),
        Command::Order { input, policy } => order(&load(&input)?, policy),
        Command::Price {
            input,
            mode,
            policy,
        } => price(&load(&input)?, mode, policy),
        Command::Simulate {
            input,
            mode,
            policy,
            exhaustive: _,
            orders,
            seed,
            budget,
            format: Format::Json,
        } => {
            let m = load(&input)?;
            let cfg = SimConfig {
                mode: mode.into(),
                policy: policy.into(),
                state_budget: budget,
                seed,
                ..SimConfig::default()
            };
            let mut verdict = match orders {
                Some(n) => run_random_orders(&m, &cfg, n)?,
                None => run_exhaustive(&m, &cfg)?,
            };
            verdict.instance = Some(input.display().to_string());
            let ok = verdict.all_optimal;
            Ok((json!(verdict), ok))
        }
        Command::Generate {
            seed,
            demands,
            min_value,
            max_value,
        } => {
            let m = generate_instance(seed, &demands, min_value..=max_value)?;
            Ok((json!(MarketJson(&m)), true))
        }
        Command::Verify { input, policy } => verify(&load(&input)?, policy),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let pretty = cli.pretty;
    match run(cli) {
        Ok((value, ok)) => {
            let text = if pretty {
                serde_json::to_string_pretty(&value)
            } else {
                serde_json::to_string(&value)
            };
            println!("{}", text.expect("JSON values always serialize"));
            if ok {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
