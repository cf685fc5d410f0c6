#pragma once

#include <functional>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "boolgen/config.h"
#include "boolgen/entrez.h"
#include "boolgen/llm.h"

namespace boolgen {

enum ExitCode : int {
  kExitOk = 0,
  kExitValidationFailure = 1,
  kExitConfigError = 2,
  kExitRuntimeError = 3,
};

using BackendFactory = std::function<std::shared_ptr<GenerationBackend>(const BackendSpec&)>;
using TransportFactory = std::function<std::shared_ptr<Transport>()>;

// Hooks for tests; defaults build real backends and HTTP transports.
struct CliServices {
  BackendFactory backend_factory = make_backend;
  TransportFactory transport_factory = [] { return std::make_shared<HttpTransport>(); };
};

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err,
            const CliServices& services = {});

struct GenerateOptions {
  std::vector<std::string> prompts;   // empty: experiment matrix
  std::vector<std::string> backends;  // empty: experiment matrix
  std::vector<std::string> strategies;
  int jobs = 1;
  bool dry_run = false;
};

int cmd_validate(const std::vector<std::string>& queries, bool show_ast, Precedence precedence,
                 std::ostream& out);
int cmd_ingest(const RunConfig& config, std::ostream& out);
int cmd_generate(const RunConfig& config, const GenerateOptions& options,
                 const CliServices& services, std::ostream& out, std::ostream& err);
int cmd_execute(const RunConfig& config, const std::filesystem::path& run_dir,
                RetrievalTarget target, bool include_baselines, int jobs,
                const CliServices& services, std::ostream& out, std::ostream& err);
int cmd_evaluate(const RunConfig& config, const std::filesystem::path& run_dir, std::ostream& out,
                 std::ostream& err);
int cmd_report(const std::vector<std::filesystem::path>& run_dirs,
               const std::optional<std::filesystem::path>& baseline_dir,
               const std::filesystem::path& out_dir, std::ostream& out, std::ostream& err);

}  // namespace boolgen
