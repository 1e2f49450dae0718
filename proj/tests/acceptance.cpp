// One PASS/FAIL line per acceptance criterion; exit status is the number of
// failures.

#include <filesystem>
#include <iostream>

#include "autofed/checks.hpp"

int main(int argc, char** argv) {
  const std::filesystem::path scratch =
      argc > 1 ? std::filesystem::path(argv[1])
               : std::filesystem::temp_directory_path() / "autofed-acceptance";
  const int failures = autofed::checks::run_all(true, scratch, std::cout);
  std::cout << (failures == 0 ? "all criteria pass" : std::to_string(failures) + " criteria failing")
            << '\n';
  return failures;
}
