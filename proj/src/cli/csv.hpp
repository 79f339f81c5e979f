#pragma once

#include "ghme/model.hpp"

#include <string>
#include <vector>

namespace ghme::cli {

// Comma-separated, '.' decimal, mandatory header; no quoting.
struct CsvTable {
    std::string path;
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;
    std::vector<std::size_t> line_no;  // 1-based source line of each row

    // -1 when absent.
    int column(const std::string& name) const;
};

CsvTable read_csv(const std::string& path);
// Parses a finite number; data error with path:line otherwise.
double number_at(const CsvTable& t, std::size_t row, int col);

// Which columns feed each covariate role. A column named "intercept" that is
// absent from the file is synthesized as a column of ones.
struct RoleMap {
    std::string id = "id";
    std::string y = "y";
    std::vector<std::string> x, z, w;
};

// Rows are grouped by id in order of first appearance. With need_y = false a
// missing or empty y column is allowed and the responses are set to zero.
LongitudinalDataset dataset_from_csv(const CsvTable& t, const RoleMap& roles, bool need_y = true);

// Writes id,y,x0..,z0..,w0.. with full precision.
void write_dataset_csv(const std::string& path, const LongitudinalDataset& ds);
RoleMap default_roles(const LongitudinalDataset& ds);
// Roles from the x<k>, z<k>, w<k> column names written by write_dataset_csv.
RoleMap infer_roles(const CsvTable& t);

std::string format_full(double x);

}  // namespace ghme::cli
