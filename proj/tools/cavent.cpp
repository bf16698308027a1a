// cavent: run entanglement protocols, parameter sweeps and frame comparisons.
//
//   cavent protocol two-atom-qutrit --engine full --g 1 --delta 10
//   cavent sweep two-atom-qutrit --engine lindblad --g 1 --delta 10 \
//       --sweep-param kappa --sweep-from 0 --sweep-to 0.2 --sweep-steps 5 --out kappa.csv
//   cavent compare-frames ghz-two-level --n 2 --g 1 --delta 10
//   cavent list-protocols
//
// Exit codes: 0 success, 1 config error, 2 physics-check failure.

#include "cavent/cli.hpp"

#include <CLI11.hpp>

#include <iostream>
#include <string>
#include <vector>

namespace {

using cavent::cli::json;

struct Flag {
  const char* name;  // command-line flag
  const char* key;   // config field
  enum { Int, Real, Text } kind;
  const char* help;
};

const std::vector<Flag>& flags() {
  static const std::vector<Flag> f = {
      {"--system", "system", Flag::Text, "cavity | ion"},
      {"--engine", "engine", Flag::Text, "effective | full | lindblad"},
      {"--n", "N", Flag::Int, "number of atoms"},
      {"--atom-dim", "atom_dim", Flag::Int, "levels per atom"},
      {"--g", "g", Flag::Real, "atom-cavity coupling"},
      {"--delta", "delta", Flag::Real, "detuning"},
      {"--omega", "omega", Flag::Real, "ion laser Rabi frequency"},
      {"--omega-k", "omega_k", Flag::Int, "carrier index k (n for GHZ plans)"},
      {"--omega-k2", "omega_k2", Flag::Int, "second carrier index k'"},
      {"--eta", "eta", Flag::Real, "Lamb-Dicke parameter"},
      {"--nu", "nu", Flag::Real, "trap frequency"},
      {"--lamb-dicke-order", "lamb_dicke_order", Flag::Int, "sideband series order"},
      {"--nbar", "nbar", Flag::Real, "initial thermal occupation"},
      {"--initial-fock", "initial_fock", Flag::Int, "initial Fock state (nbar = 0)"},
      {"--fock-cutoff", "fock_cutoff", Flag::Int, "highest Fock level kept"},
      {"--kappa", "kappa", Flag::Real, "mode decay rate (lindblad)"},
      {"--nbar-bath", "nbar_bath", Flag::Real, "bath occupation (lindblad)"},
      {"--rel-tol", "rel_tol", Flag::Real, "integrator relative tolerance"},
      {"--abs-tol", "abs_tol", Flag::Real, "integrator absolute tolerance"},
      {"--max-step", "max_step", Flag::Real, "integrator step cap"},
      {"--measure", "measure", Flag::Text, "enumerate | postselect | sample"},
      {"--seed", "seed", Flag::Int, "seed for sample mode"},
      {"--out", "out", Flag::Text, "output path (default stdout)"},
      {"--format", "format", Flag::Text, "csv | json"},
      {"--sweep-param", "sweep_param", Flag::Text, "parameter to sweep"},
      {"--sweep-from", "sweep_from", Flag::Real, "first sweep value"},
      {"--sweep-to", "sweep_to", Flag::Real, "last sweep value"},
      {"--sweep-steps", "sweep_steps", Flag::Int, "number of sweep points"},
  };
  return f;
}

struct Values {
  std::vector<long long> ints;
  std::vector<double> reals;
  std::vector<std::string> texts;
  std::vector<CLI::Option*> opts;
  std::string config_path, protocol;
  bool force = false;
};

void add_run_options(CLI::App* sub, Values& v) {
  sub->add_option("protocol", v.protocol, "protocol name (see list-protocols)");
  sub->add_option("--config", v.config_path, "flat JSON config; flags override its fields");
  sub->add_flag("--force", v.force, "overwrite an existing output file");
  v.ints.resize(flags().size());
  v.reals.resize(flags().size());
  v.texts.resize(flags().size());
  for (size_t i = 0; i < flags().size(); ++i) {
    const Flag& f = flags()[i];
    CLI::Option* o = nullptr;
    switch (f.kind) {
      case Flag::Int: o = sub->add_option(f.name, v.ints[i], f.help); break;
      case Flag::Real: o = sub->add_option(f.name, v.reals[i], f.help); break;
      case Flag::Text: o = sub->add_option(f.name, v.texts[i], f.help); break;
    }
    v.opts.push_back(o);
  }
}

cavent::cli::RunConfig build_config(const Values& v) {
  json j = v.config_path.empty() ? json::object() : cavent::cli::load_config_file(v.config_path);
  for (size_t i = 0; i < flags().size(); ++i) {
    if (v.opts[i]->count() == 0) continue;
    const Flag& f = flags()[i];
    switch (f.kind) {
      case Flag::Int: j[f.key] = v.ints[i]; break;
      case Flag::Real: j[f.key] = v.reals[i]; break;
      case Flag::Text: j[f.key] = v.texts[i]; break;
    }
  }
  if (!v.protocol.empty()) j["protocol"] = v.protocol;
  if (v.force) j["force"] = true;
  return cavent::cli::config_from_json(j);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Entangled-state protocols for atoms in a dispersive cavity and trapped ions"};
  app.require_subcommand(1);

  Values pv, sv, cv;
  CLI::App* protocol = app.add_subcommand("protocol", "run one protocol and report branches and fidelities");
  CLI::App* sweep = app.add_subcommand("sweep", "run a protocol over a parameter range (CSV by default)");
  CLI::App* compare = app.add_subcommand("compare-frames", "evolve under every Hamiltonian frame and compare");
  app.add_subcommand("list-protocols", "print the protocol names");
  add_run_options(protocol, pv);
  add_run_options(sweep, sv);
  add_run_options(compare, cv);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  const std::string name = app.get_subcommands().front()->get_name();
  const Values& v = name == "protocol" ? pv : name == "sweep" ? sv : cv;
  cavent::cli::RunConfig config;
  if (name != "list-protocols") {
    try {
      config = build_config(v);
    } catch (const std::invalid_argument& e) {
      std::cerr << "config error: " << e.what() << '\n';
      return 1;
    }
  }
  return cavent::cli::run_command(name, config, std::cerr);
}
