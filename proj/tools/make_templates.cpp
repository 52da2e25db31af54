// Regenerates the shipped template files from the built-in task definitions.
#include <filesystem>
#include <iostream>

#include "icl/task_library.hpp"

int main(int argc, char** argv) {
    std::filesystem::path dir = argc > 1 ? argv[1] : "templates";
    std::filesystem::create_directories(dir);
    for (const auto& name : icl::corpus::builtin_task_names()) {
        auto path = dir / (name + ".json");
        icl::corpus::save_task(icl::corpus::builtin_task(name), path);
        std::cout << "wrote " << path.string() << "\n";
    }
    return 0;
}
