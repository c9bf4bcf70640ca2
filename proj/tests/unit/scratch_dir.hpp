#pragma once

#include <filesystem>
#include <string>

#include <gtest/gtest.h>
#include <unistd.h>

/// Fresh directory named after the running test.
inline std::filesystem::path scratch_dir()
{
  const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
  const auto dir = std::filesystem::temp_directory_path()
                   / ("mocap_" + std::string(info->test_suite_name()) + "_" + info->name() + "_"
                      + std::to_string(::getpid()));
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}
