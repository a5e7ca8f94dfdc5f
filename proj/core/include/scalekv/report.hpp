#pragma once

#include <string>
#include <vector>

#include "scalekv/bench.hpp"

namespace scalekv {

struct ReportResult {
    std::string markdown;
    std::vector<std::string> violations;  // audit/consistency failures; non-empty means exit 2
    bool trend_violation = false;         // scalekv behind snapkv at the 10% budget
};

// Folds one or more bench CSVs (plus their audits, when available) into a
// markdown summary: per-budget policy rankings by mean final-logit MSE,
// byte-exact reconciliation of CSV figures against audits, and a prominent
// banner when the expected scalekv-vs-snapkv ordering does not hold.
ReportResult build_report(const std::vector<std::pair<std::string, std::string>>& csv_sources,
                          const std::vector<BenchAudit>& audits);

}  // namespace scalekv
