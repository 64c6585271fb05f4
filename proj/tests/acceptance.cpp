// Acceptance suite: one pass/fail line per criterion, nonzero exit on any
// failure. Artifacts land under the directory given as argv[1] (default
// ./acceptance_out).

#include <filesystem>
#include <iostream>

#include "tom/pipeline.hpp"

int main(int argc, char** argv) {
    const std::filesystem::path out = argc > 1 ? argv[1] : "acceptance_out";
    try {
        const auto results = tom::run_acceptance(out, 1, std::cout);
        int failures = 0;
        for (const auto& r : results)
            if (!r.pass) ++failures;
        std::cout << (failures == 0 ? "acceptance: all criteria passed"
                                    : "acceptance: " + std::to_string(failures) +
                                          " criterion(s) failed")
                  << '\n';
        return failures == 0 ? 0 : 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
}
