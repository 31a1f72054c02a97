// Acceptance run: executes the preregistered suites under the default master seed, prints one line per
// criterion, then repeats the full run and requires identical statistics.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "arratia/config.hpp"
#include "arratia/verify.hpp"

using namespace arratia;

namespace {

struct Criterion {
    int id;
    std::string title;
    std::vector<std::string> suites;
};

const std::vector<Criterion> kCriteria = {
    {1, "survival consistency triangle", {"survival-triangle"}},
    {2, "PDE residual order under mesh halving", {"pde-order"}},
    {3, "coalescence time law (KS)", {"coalescence-law"}},
    {4, "stopped integral isometry", {"j-isometry"}},
    {5, "stopped integral orthogonality", {"j-orthogonality"}},
    {6, "transport of the conditioned law (KS)", {"girsanov-transport"}},
    {7, "Clark reconstruction and variance", {"clark-identity"}},
    {8, "conditional martingale", {"conditional-martingale"}},
    {9, "bracket of the G map", {"g-bracket"}},
    {10, "A-operator isometry, n = 2 and n = 3", {"a-isometry-n2", "a-isometry-n3"}},
    {11, "expansion round trip and Bessel bound", {"expansion-roundtrip"}},
    {12, "naive flow integrals violate orthogonality", {"naive-flow-demo"}},
    {13, "phi / psi round trip", {"phi-psi-roundtrip"}},
};

// Deterministic content of a verdict. Warnings are left out: a cold and a warm field cache differ only there.
nlohmann::json statistics_of(const Verdict& v) {
    auto j = v.to_json();
    j.erase("warnings");
    return j;
}

std::string csv_of(const SummaryReport& r) {
    std::ostringstream os;
    r.write_csv(os);
    return os.str();
}

}  // namespace

int main(int argc, char** argv) {
    const std::filesystem::path out = argc > 1 ? argv[1] : "acceptance-out";
    std::filesystem::create_directories(out);
    const std::string cache = (out / "cache").string();
    std::filesystem::remove_all(cache);

    RunConfig cfg;
    cfg.cache_dir = cache;
    const auto specs = suites_for(cfg);
    const RunContext ctx{cfg.threads, cache};

    std::cout << "acceptance: master seed " << cfg.master_seed << ", " << specs.size() << " suites\n" << std::flush;
    const auto first = run_specs(specs, ctx, cfg.to_json(), cfg.master_seed, &std::cout);
    std::ofstream(out / "report.json") << first.to_json(true).dump(2) << '\n';
    {
        std::ofstream csv(out / "report.csv");
        first.write_csv(csv);
    }

    std::map<std::string, const Verdict*> by_name;
    for (const auto& v : first.verdicts) by_name[v.name] = &v;

    std::cout << "\ncriteria\n" << std::flush;
    int failed = 0;
    for (const auto& c : kCriteria) {
        bool ok = true;
        std::string detail;
        for (const auto& s : c.suites) {
            const auto it = by_name.find(s);
            const bool pass = it != by_name.end() && it->second->pass;
            ok = ok && pass;
            if (!detail.empty()) detail += "; ";
            detail += s + ": " + (it == by_name.end() ? "missing" : it->second->status);
        }
        failed += ok ? 0 : 1;
        std::printf("C%-2d %s  %s (%s)\n", c.id, ok ? "PASS" : "FAIL", c.title.c_str(), detail.c_str());
    }
    std::fflush(stdout);

    std::cout << "\nrepeating the full run for the determinism check\n" << std::flush;
    const auto second = run_specs(specs, ctx, cfg.to_json(), cfg.master_seed, nullptr);
    std::size_t differing = 0;
    bool same_shape = first.verdicts.size() == second.verdicts.size();
    for (std::size_t i = 0; same_shape && i < first.verdicts.size(); ++i)
        if (statistics_of(first.verdicts[i]) != statistics_of(second.verdicts[i])) {
            ++differing;
            std::cout << "  differs: " << first.verdicts[i].name << '\n';
        }
    const bool deterministic = same_shape && differing == 0 && csv_of(first) == csv_of(second);
    failed += deterministic ? 0 : 1;
    std::printf("C14 %s  determinism of a repeated full run (%zu suites, %zu differing, CSV %s)\n",
                deterministic ? "PASS" : "FAIL", first.verdicts.size(), differing,
                csv_of(first) == csv_of(second) ? "identical" : "differs");

    std::printf("\n%d of 14 criteria failed; all suites %s\n", failed, first.pass ? "passed" : "did not pass");
    return failed == 0 && first.pass ? 0 : 1;
}
