#include <cstdio>
#include <cstdlib>
#include <string>
#include <vector>

#include <mfgdecode/acceptance.hpp>

int main(int argc, char** argv)
{
    mfg::AcceptanceOptions opt;
    std::vector<std::string> only;
    for (int i = 1; i < argc; ++i) only.emplace_back(argv[i]);
    if (const char* j = std::getenv("MFGDECODE_JOBS")) opt.jobs = std::max(1, std::atoi(j));

    bool all = true;
    mfg::run_acceptance(opt, only, [&](const mfg::CriterionResult& r) {
        std::printf("%s %s %s: %s (%.1f s)\n", r.pass ? "PASS" : "FAIL", r.id.c_str(), r.title.c_str(), r.detail.c_str(),
                    r.seconds);
        std::fflush(stdout);
        all = all && r.pass;
    });
    return all ? 0 : 1;
}
