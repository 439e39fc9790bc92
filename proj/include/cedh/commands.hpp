#pragma once

#include <functional>
#include <iosfwd>

#include "cedh/config.hpp"

namespace cedh {

enum ExitCode : int {
    kExitOk = 0,
    kExitUsage = 1,
    kExitData = 2,
    kExitBackend = 3,
    kExitStrict = 4,
};

// Runs `body`, mapping harness exceptions onto exit codes and printing the
// message to `err`.
int guarded(std::ostream& err, const std::function<int()>& body);

int cmd_ingest(const RunConfig& config, std::ostream& out, std::ostream& err);
int cmd_calibrate(const RunConfig& config, std::ostream& out, std::ostream& err);
/// Mode label for output names: "<mode>" or "<mode>+cal" when calibration is enabled.
std::string run_label(const RunConfig& config);

int cmd_eval(const RunConfig& config, std::ostream& out, std::ostream& err);
int cmd_profile(const RunConfig& config, std::ostream& out, std::ostream& err);
int cmd_report(const RunConfig& config, std::ostream& out, std::ostream& err);
int cmd_sft_export(const RunConfig& config, std::ostream& out, std::ostream& err);

// Decisions for every pair of `dev`, computed with at most
// config.concurrency requests in flight. Output order follows `dev`.
std::vector<Decision> run_decisions(const RunConfig& config, const Dataset& dev,
                                    const Dataset* exemplar_train, Backend& backend,
                                    const CalibrationModel* calibration);

// As above with a prebuilt exemplar pool. `sink` receives each decision in
// dataset order as soon as every earlier pair has finished.
std::vector<Decision> run_decisions(const RunConfig& config, const Dataset& dev,
                                    const ExemplarPool* pool, Backend& backend,
                                    const CalibrationModel* calibration,
                                    const std::function<void(const Decision&)>& sink);

}  // namespace cedh
